"""Combining expert forecasts: uniform, fixed weights and MLpol."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .core import STATES, ForecastPanel

DEFAULT_FIXED_WEIGHTS = (0.35, 0.25, 0.4)  # tree regressor, classifier, ARIMA
WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ExpertSet:
    names: tuple[str, ...]
    panels: tuple[ForecastPanel, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "panels", tuple(self.panels))
        if len(self.names) != len(self.panels):
            raise ValueError("one name per expert panel is required")
        if not self.panels:
            raise ValueError("an expert set needs at least one expert")
        if len(set(self.names)) != len(self.names):
            raise ValueError("expert names must be unique")
        ref = self.panels[0]
        for name, p in zip(self.names, self.panels):
            if tuple(p.nodes) != tuple(ref.nodes) or not p.times.equals(ref.times):
                raise ValueError(f"expert {name!r} does not share the axes of {self.names[0]!r}")
            if not p.is_finite:
                raise ValueError(f"expert {name!r} has non-finite values")

    @classmethod
    def from_dict(cls, experts: dict[str, ForecastPanel]) -> "ExpertSet":
        return cls(tuple(experts), tuple(experts.values()))

    @property
    def times(self) -> pd.DatetimeIndex:
        return self.panels[0].times

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.panels[0].nodes

    def stack(self) -> np.ndarray:
        """(T, nodes, 4, K) expert values."""
        return np.stack([p.values for p in self.panels], axis=-1)


def _wrap(experts: ExpertSet, values: np.ndarray) -> ForecastPanel:
    return ForecastPanel(experts.times, experts.nodes, values)


def uniform_agg(experts: ExpertSet) -> ForecastPanel:
    if not experts.panels:
        raise ValueError("cannot aggregate an empty expert set")
    return _wrap(experts, experts.stack().mean(axis=-1))


def check_fixed_weights(weights, k: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ValueError(f"got {w.size} weights for {k} experts")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1 (got {w.sum():.12g})")
    return w


def fixed_weight_agg(experts: ExpertSet, weights=DEFAULT_FIXED_WEIGHTS) -> ForecastPanel:
    w = check_fixed_weights(weights, len(experts.panels))
    out = w[0] * experts.panels[0].values
    for wk, p in zip(w[1:], experts.panels[1:]):
        out = out + wk * p.values
    return _wrap(experts, out)


@dataclass(frozen=True)
class MLPolState:
    cumulative_regret: np.ndarray
    cumulative_sq_regret: np.ndarray
    weights: np.ndarray

    @classmethod
    def initial(cls, k: int) -> "MLPolState":
        if k < 1:
            raise ValueError("need at least one expert")
        return cls(np.zeros(k), np.zeros(k), np.full(k, 1.0 / k))


def _mlpol_update(R, S, W, F, y):
    """One step for a batch of series: arrays (..., K), truth (...)."""
    pred = (W * F).sum(axis=-1)
    r = np.abs(pred - y)[..., None] - np.abs(F - y[..., None])
    R = R + r
    S = S + r * r
    num = np.maximum(R, 0.0) / (1.0 + S)
    tot = num.sum(axis=-1, keepdims=True)
    k = F.shape[-1]
    W = np.where(tot > 0, num / np.where(tot > 0, tot, 1.0), 1.0 / k)
    return pred, R, S, W


def mlpol_step(state: MLPolState, expert_preds, truth: float) -> tuple[float, MLPolState]:
    """Predict with the current weights, then update from the absolute-loss regrets."""
    f = np.asarray(expert_preds, dtype=np.float64)
    if f.shape != state.weights.shape:
        raise ValueError(f"expected {state.weights.size} expert predictions")
    if np.isnan(f).any() or np.isnan(truth):
        raise ValueError("mlpol_step: NaN input")
    pred, R, S, W = _mlpol_update(state.cumulative_regret, state.cumulative_sq_regret, state.weights, f, np.float64(truth))
    return float(pred), MLPolState(R, S, W)


@dataclass
class MLPolResult:
    panel: ForecastPanel
    weights: np.ndarray  # (T, nodes, 4, K): weights applied at each output timestamp
    final_weights: np.ndarray  # (nodes, 4, K)
    expert_names: tuple[str, ...]
    fit_trace: np.ndarray | None = None  # freeze mode: weights in effect at each fit step

    def trace_frame(self) -> pd.DataFrame:
        t, n, s, k = self.weights.shape
        times = self.panel.times.strftime("%Y-%m-%dT%H:%M:%S").to_numpy()
        return pd.DataFrame(
            {
                "timestamp": np.repeat(times, n * s * k),
                "node": np.tile(np.repeat(np.array(self.panel.nodes, dtype=object), s * k), t),
                "state": np.tile(np.repeat(np.array(STATES, dtype=object), k), t * n),
                "expert": np.tile(np.array(self.expert_names, dtype=object), t * n * s),
                "weight": self.weights.reshape(-1),
            }
        )

    def write_trace(self, path) -> None:
        self.trace_frame().to_csv(path, index=False, lineterminator="\n")


def _truth_at(truth: ForecastPanel, times: pd.DatetimeIndex, nodes: Sequence[str]) -> np.ndarray:
    pos = truth.times.get_indexer(times)
    if (pos < 0).any():
        raise ValueError(f"truth is unavailable at {times[pos < 0][0]}")
    return truth.values[pos][:, truth.node_pos(nodes)]


def _run(R, S, W, F, Y):
    """Sequential updates over the leading time axis; NaN truth cells keep their state."""
    used = np.empty(F.shape)
    for t in range(F.shape[0]):
        used[t] = W
        y = Y[t]
        ok = ~np.isnan(y)
        if not ok.any():
            continue
        _, R2, S2, W2 = _mlpol_update(R, S, W, F[t], np.where(ok, y, 0.0))
        R = np.where(ok[..., None], R2, R)
        S = np.where(ok[..., None], S2, S)
        W = np.where(ok[..., None], W2, W)
    return R, S, W, used


def mlpol_aggregate(experts: ExpertSet, truth: ForecastPanel, mode: str = "fit_then_freeze", fit_window=None) -> MLPolResult:
    """Independent MLpol per (node, state) series.

    ``online`` updates after every timestamp of the experts' horizon.
    ``fit_then_freeze`` runs the updates over ``fit_window`` only and applies the
    final weights to the whole horizon; an empty window leaves them uniform.
    Cells where the truth is unobserved do not update their series.
    """
    if mode == "freeze":
        mode = "fit_then_freeze"
    if mode not in ("online", "fit_then_freeze"):
        raise ValueError(f"unknown MLpol mode {mode!r}")
    F = experts.stack()
    t, n, s, k = F.shape
    R, S = np.zeros((n, s, k)), np.zeros((n, s, k))
    W = np.full((n, s, k), 1.0 / k)
    if mode == "online":
        Y = _truth_at(truth, experts.times, experts.nodes)
        R, S, W, used = _run(R, S, W, F, Y)
        values = (used * F).sum(axis=-1)
        return MLPolResult(_wrap(experts, values), used, W, experts.names)
    window = experts.times if fit_window is None else pd.DatetimeIndex(fit_window).sort_values()
    fit_trace = None
    if len(window):
        pos = experts.times.get_indexer(window)
        if (pos < 0).any():
            raise ValueError(f"fit window timestamp {window[pos < 0][0]} is outside the experts' horizon")
        Y = _truth_at(truth, window, experts.nodes)
        R, S, W, fit_trace = _run(R, S, W, F[pos], Y)
    used = np.broadcast_to(W, F.shape)
    values = (used * F).sum(axis=-1)
    return MLPolResult(_wrap(experts, values), np.array(used), W, experts.names, fit_trace)
