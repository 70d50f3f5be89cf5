"""Recency weights and caller-side early stopping for the boosted models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..core import STEP, STEPS_PER_DAY
from ..gbt import BoostConfig, BoostedModel, fit_classifier, fit_regressor


def exp_weights(times, tau_days: float = 30.0, t_max=None) -> np.ndarray:
    """``exp((t - t_max) / tau)`` with both measured in 15-minute steps.

    ``t_max`` defaults to one step after the last of ``times``, i.e. the first
    timestamp to be forecast.
    """
    times = pd.DatetimeIndex(times)
    if tau_days <= 0:
        raise ValueError("tau_days must be positive")
    if t_max is None:
        if len(times) == 0:
            return np.zeros(0)
        t_max = times.max() + STEP
    t_max = pd.Timestamp(t_max)
    if len(times) and times.max() > t_max:
        raise ValueError(f"t_max {t_max} precedes training timestamp {times.max()}")
    steps = (times - t_max) / STEP
    return np.exp(np.asarray(steps, dtype=np.float64) / (tau_days * STEPS_PER_DAY))


@dataclass(frozen=True)
class EarlyStopping:
    """Hold out the chronologically last ``validation_fraction`` of rows and
    keep the round count with the lowest validation loss, stopping once it has
    not improved for ``patience`` rounds."""

    patience: int = 10
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie strictly between 0 and 1")

    def best_rounds(self, model: BoostedModel, X, y, w) -> int:
        best, best_loss, since = 0, np.inf, 0
        for r, scores in enumerate(model.staged_decision(X), start=1):
            if model.is_classifier:
                z = scores - scores.max(axis=1, keepdims=True)
                logp = z[np.arange(len(y)), y] - np.log(np.exp(z).sum(axis=1))
                loss = -np.dot(w, logp)
            else:
                loss = np.dot(w, (y - scores[:, 0]) ** 2)
            if loss < best_loss:
                best, best_loss, since = r, loss, 0
            else:
                since += 1
                if since >= self.patience:
                    break
        return max(best, 1)


def fit_boosted(X, y, w, cfg: BoostConfig, stopping: EarlyStopping | None = None) -> BoostedModel:
    """Fit a regressor or classifier (by ``cfg.n_classes``), optionally early-stopped."""
    fit = fit_classifier if cfg.n_classes > 1 else fit_regressor
    if stopping is None:
        return fit(X, y, w, cfg)
    n_val = int(round(stopping.validation_fraction * len(y)))
    if n_val < 1 or n_val >= len(y):
        return fit(X, y, w, cfg)
    cut = len(y) - n_val
    model = fit(X[:cut], y[:cut], w[:cut], cfg)
    return model.truncated(stopping.best_rounds(model, X[cut:], y[cut:], w[cut:]))
