"""Non-seasonal ARIMA(p, d, q) by conditional sum of squares."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.signal import lfilter

from ..core import Panel
from ..preprocess import rolling_smooth
from .base import Forecaster, future_steps, level_targets, parallel_map, register

logger = logging.getLogger(__name__)

MIN_LENGTH = 50
_PENALTY = 1e10


@dataclass(frozen=True)
class ArimaParams:
    p: int
    d: int
    q: int
    phi: tuple[float, ...]
    theta: tuple[float, ...]
    intercept: float = 0.0
    sigma2: float = float("nan")
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(x) for x in self.phi))
        object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))
        if len(self.phi) != self.p or len(self.theta) != self.q:
            raise ValueError("coefficient lengths must match the (p, q) orders")
        if min(self.p, self.d, self.q) < 0:
            raise ValueError("orders must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phi"], d["theta"] = list(self.phi), list(self.theta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArimaParams":
        return cls(**d)


def _root_violation(coefs: np.ndarray, sign: float) -> float:
    """How far the roots of ``1 + sign * sum(c_i z^i)`` fall inside the unit circle (0 if none)."""
    if coefs.size == 0 or not coefs.any():
        return 0.0
    poly = np.r_[sign * coefs[::-1], 1.0]
    roots = np.roots(poly)
    return float(max(0.0, 1.0 - np.abs(roots).min() + 1e-8)) if roots.size else 0.0


def css_residuals(w: np.ndarray, phi, theta, c: float = 0.0) -> np.ndarray:
    """``e_t = w_t - c - sum phi_i w_{t-i} - sum theta_j e_{t-j}`` for t >= p, zero before."""
    p = len(phi)
    u = w[p:] - c
    for i, f in enumerate(phi, start=1):
        u = u - f * w[p - i : len(w) - i]
    e = lfilter([1.0], np.r_[1.0, theta], u) if len(theta) else u
    return np.r_[np.zeros(p), e]


def fit_arima(series, p: int = 2, d: int = 1, q: int = 1, include_intercept: bool | None = None, max_iter: int = 500) -> ArimaParams:
    """Estimate ARIMA coefficients by minimising the conditional sum of squares.

    Nelder-Mead starts from zero coefficients and the sample mean of the
    differenced series; parameters outside the stationary/invertible region are
    penalised. The intercept is only estimated for ``d == 0`` unless requested.
    """
    x = np.asarray(series, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("series contains non-finite values; drop or impute them first")
    w = np.diff(x, n=d) if d else x
    if len(w) < MIN_LENGTH:
        raise ValueError(f"series has {len(w)} values after differencing, need at least {MIN_LENGTH}")
    use_c = (d == 0) if include_intercept is None else include_intercept
    n = len(w) - p

    def objective(theta_all):
        phi, th = theta_all[:p], theta_all[p : p + q]
        c = theta_all[p + q] if use_c else 0.0
        bad = _root_violation(phi, -1.0) + _root_violation(th, 1.0)
        if bad > 0:
            return _PENALTY * (1.0 + bad)
        e = css_residuals(w, phi, th, c)[p:]
        return float(np.dot(e, e) / n)

    x0 = np.zeros(p + q + (1 if use_c else 0))
    if use_c:
        x0[-1] = w.mean()
    if x0.size == 0:
        return ArimaParams(p, d, q, (), (), 0.0, objective(x0), True)
    res = minimize(objective, x0, method="Nelder-Mead", options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-10})
    if not res.success:
        logger.warning("ARIMA(%d,%d,%d): %s; returning the best point found", p, d, q, res.message)
    sol = res.x
    return ArimaParams(p, d, q, tuple(sol[:p]), tuple(sol[p : p + q]), float(sol[p + q]) if use_c else 0.0, float(res.fun), bool(res.success))


@dataclass(frozen=True)
class ArimaState:
    """What the forecast recursion needs from the end of a history."""

    levels: tuple[float, ...]  # last value of each differencing order 0..d-1
    w_tail: tuple[float, ...]  # last p differenced values, oldest first
    e_tail: tuple[float, ...]  # last q residuals, oldest first


def arima_state(params: ArimaParams, history) -> ArimaState:
    x = np.asarray(history, dtype=np.float64)
    if len(x) < params.p + params.d or len(x) == 0:
        raise ValueError(f"history of length {len(x)} is shorter than p + d = {params.p + params.d}")
    levels = tuple(float(np.diff(x, n=k)[-1]) for k in range(params.d))
    w = np.diff(x, n=params.d) if params.d else x
    e = css_residuals(w, params.phi, params.theta, params.intercept) if len(w) > params.p else np.zeros(len(w))
    w_tail = tuple(w[len(w) - params.p :]) if params.p else ()
    if params.q:
        e_tail = tuple(np.r_[np.zeros(params.q), e][-params.q :])
    else:
        e_tail = ()
    return ArimaState(levels, w_tail, e_tail)


def forecast_from_state(params: ArimaParams, state: ArimaState, horizon: int) -> np.ndarray:
    p, q = params.p, params.q
    w_hist = list(state.w_tail)
    e_hist = list(state.e_tail)
    out = np.empty(horizon)
    for h in range(horizon):
        v = params.intercept
        for i in range(1, p + 1):
            v += params.phi[i - 1] * w_hist[-i]
        for j in range(1, q + 1):
            v += params.theta[j - 1] * e_hist[-j]
        out[h] = v
        if p:
            w_hist.append(v)
        if q:
            e_hist.append(0.0)
    # undo differencing one order at a time
    for k in range(params.d - 1, -1, -1):
        out = state.levels[k] + np.cumsum(out)
    return out


def arima_forecast(params: ArimaParams, history, horizon: int) -> np.ndarray:
    """Recursive multi-step forecast with future shocks set to zero."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    state = arima_state(params, history)
    return forecast_from_state(params, state, horizon) if horizon else np.zeros(0)


@register
class ArimaForecaster(Forecaster):
    """One ARIMA per (node, state) series, fitted on the smoothed observed values."""

    kind = "arima"

    def __init__(self, order=(2, 1, 1), smooth_window: int = 10, levels=("station",), include_intercept: bool | None = None, max_iter: int = 500):
        super().__init__()
        self.order = tuple(int(v) for v in order)
        if len(self.order) != 3:
            raise ValueError("order must be (p, d, q)")
        self.smooth_window = smooth_window
        self.levels = tuple(levels)
        self.include_intercept = include_intercept
        self.max_iter = max_iter
        self.params: list[list[ArimaParams]] = []
        self.states: list[list[ArimaState]] = []

    @property
    def config(self) -> dict:
        return {
            "order": list(self.order),
            "smooth_window": self.smooth_window,
            "levels": list(self.levels),
            "include_intercept": self.include_intercept,
            "max_iter": self.max_iter,
        }

    @property
    def n_models(self) -> int:
        return 4 * len(self.nodes)

    def _fit_one(self, series: np.ndarray):
        x = series[np.isfinite(series)]
        x = rolling_smooth(x, self.smooth_window)
        p, d, q = self.order
        params = fit_arima(x, p, d, q, self.include_intercept, self.max_iter)
        return params, arima_state(params, x)

    def _fit(self, panel: Panel, weights, jobs) -> None:
        self.nodes, values = level_targets(panel, self.levels)
        jobs_list = [values[:, n, k] for n in range(len(self.nodes)) for k in range(4)]
        try:
            fitted = parallel_map(self._fit_one, jobs_list, jobs)
        except ValueError as exc:
            raise ValueError(f"arima: {exc}") from None
        self.params = [[fitted[4 * n + k][0] for k in range(4)] for n in range(len(self.nodes))]
        self.states = [[fitted[4 * n + k][1] for k in range(4)] for n in range(len(self.nodes))]
        self.notes = {"not_converged": sum(not p.converged for row in self.params for p in row)}

    def _forecast(self, times: pd.DatetimeIndex) -> np.ndarray:
        steps = future_steps(self.train_end, times)
        horizon = int(steps.max()) if steps.size else 0
        out = np.empty((len(times), len(self.nodes), 4))
        for n in range(len(self.nodes)):
            for k in range(4):
                path = forecast_from_state(self.params[n][k], self.states[n][k], horizon)
                out[:, n, k] = path[steps - 1]
        return out

    def _state(self) -> dict:
        return {
            "params": [[p.to_dict() for p in row] for row in self.params],
            "states": [[asdict(s) for s in row] for row in self.states],
        }

    def _restore(self, state, models) -> None:
        self.params = [[ArimaParams.from_dict(p) for p in row] for row in state["params"]]
        self.states = [[ArimaState(*(tuple(s[f]) for f in ("levels", "w_tail", "e_tail"))) for s in row] for row in state["states"]]
