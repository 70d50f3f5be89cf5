"""Forecasters built on the boosted-tree engine."""
from __future__ import annotations

import logging
from dataclasses import asdict

import numpy as np
import pandas as pd

from ..core import DEFAULT_PLUGS, LEVELS, STATES, STEP, Panel
from ..gbt import BoostConfig, BoostedModel
from ..postprocess import category_table, round_rescale_many
from ..preprocess import CYCLIC_FEATURES, FEATURE_NAMES, lag_matrix
from .base import Forecaster, feature_matrix, future_steps, level_targets, parallel_map, register
from .weights import EarlyStopping, fit_boosted

logger = logging.getLogger(__name__)

AR_FEATURES = CYCLIC_FEATURES + ("is_holiday",)


class _Boosted(Forecaster):
    supports_weights = True

    def __init__(self, rounds, max_depth, learning_rate, min_samples_leaf, l2_leaf, features, holidays, early_stopping):
        super().__init__()
        self.rounds = rounds
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.l2_leaf = l2_leaf
        self.features = tuple(features)
        self.holidays = None if holidays is None else tuple(str(h) for h in holidays)
        self.early_stopping = None if early_stopping is None else EarlyStopping(**dict(early_stopping))
        self.boost_config(1)

    def boost_config(self, n_classes: int = 1) -> BoostConfig:
        return BoostConfig(self.rounds, self.max_depth, self.learning_rate, self.min_samples_leaf, self.l2_leaf, n_classes)

    @property
    def config(self) -> dict:
        return {
            "rounds": self.rounds,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "min_samples_leaf": self.min_samples_leaf,
            "l2_leaf": self.l2_leaf,
            "features": list(self.features),
            "holidays": None if self.holidays is None else list(self.holidays),
            "early_stopping": None if self.early_stopping is None else asdict(self.early_stopping),
        }

    def calendar(self, times) -> np.ndarray:
        hol = None if self.holidays is None else [pd.Timestamp(h).date() for h in self.holidays]
        return feature_matrix(times, self.features, hol, self.origin)

    def _fit_model(self, X, y, w, n_classes: int = 1) -> BoostedModel:
        return fit_boosted(X, y, w, self.boost_config(n_classes), self.early_stopping)


def _history_tail(y: np.ndarray, n: int) -> np.ndarray:
    """Last ``n`` values, most recent first, with NaN carried forward from earlier values."""
    s = pd.Series(y).ffill()
    fill = np.nanmean(y) if np.isfinite(y).any() else 0.0
    tail = s.to_numpy()[-n:]
    tail = np.where(np.isnan(tail), fill, tail)
    if len(tail) < n:
        tail = np.r_[np.full(n - len(tail), tail[0] if len(tail) else fill), tail]
    return tail[::-1].copy()


@register
class ArTreeForecaster(_Boosted):
    """One autoregressive boosted regressor per (node, state).

    Features are the last ``n_lags`` values of the series and calendar
    encodings of the target time; no per-station constants. Forecasts are
    produced recursively from the end of training.
    """

    kind = "ar_tree"

    def __init__(self, n_lags: int = 20, rounds: int = 100, max_depth: int = 6, learning_rate: float = 0.1,
                 min_samples_leaf: int = 5, l2_leaf: float = 1.0, features=AR_FEATURES, levels=("station",),
                 holidays=None, early_stopping=None):
        super().__init__(rounds, max_depth, learning_rate, min_samples_leaf, l2_leaf, features, holidays, early_stopping)
        if n_lags < 1:
            raise ValueError("n_lags must be at least 1")
        self.n_lags = n_lags
        self.levels = tuple(levels)
        self.models: list[BoostedModel] = []
        self.tails: np.ndarray | None = None

    @property
    def config(self) -> dict:
        return {**super().config, "n_lags": self.n_lags, "levels": list(self.levels)}

    def _fit(self, panel: Panel, weights, jobs) -> None:
        self.nodes, values = level_targets(panel, self.levels)
        cal = self.calendar(panel.times)

        def one(job):
            n, k = job
            y = values[:, n, k]
            try:
                X, target, pos = lag_matrix(y, self.n_lags, panel.times)
            except ValueError as exc:
                raise ValueError(f"ar_tree: insufficient history for {self.nodes[n]}/{STATES[k]}: {exc}") from None
            keep = np.isfinite(X).all(axis=1) & np.isfinite(target)
            if keep.sum() == 0:
                raise ValueError(f"ar_tree: insufficient history for {self.nodes[n]}/{STATES[k]}: no complete lag window")
            X = np.hstack([X[keep], cal[pos[keep]]])
            return self._fit_model(X, target[keep], weights[pos[keep]])

        jobs_list = [(n, k) for n in range(len(self.nodes)) for k in range(4)]
        self.models = parallel_map(one, jobs_list, jobs)
        self.tails = np.stack([_history_tail(values[:, n, k], self.n_lags) for n, k in jobs_list])

    def _models(self):
        return {f"m{i:04d}": m for i, m in enumerate(self.models)}

    def _state(self):
        return {"tails": self.tails}

    def _restore(self, state, models):
        self.models = [models[k] for k in sorted(models)]
        self.tails = np.array(state["tails"], dtype=np.float64).reshape(len(self.models), self.n_lags)

    def _forecast(self, times):
        steps = future_steps(self.train_end, times)
        horizon = int(steps.max()) if steps.size else 0
        grid = self.train_end + STEP * np.arange(1, horizon + 1)
        exog = self.calendar(pd.DatetimeIndex(grid)) if horizon else np.zeros((0, len(self.features)))
        out = np.empty((len(times), len(self.nodes), 4))
        for i, m in enumerate(self.models):
            path = m.rollout(self.tails[i], exog)
            out[:, i // 4, i % 4] = path[steps - 1]
        return out


@register
class StationClassifier(_Boosted):
    """A single multi-class model over every station's plug-state category.

    Rows are (timestamp, station) pairs; the station's position is an ordinal
    feature. Observed rows that are not integral (imputed values) are mapped to
    the nearest valid state by round-and-rescale before encoding.
    """

    kind = "classifier"

    def __init__(self, rounds: int = 300, max_depth: int = 6, learning_rate: float = 0.1, min_samples_leaf: int = 5,
                 l2_leaf: float = 1.0, features=AR_FEATURES, holidays=None, early_stopping=None):
        super().__init__(rounds, max_depth, learning_rate, min_samples_leaf, l2_leaf, features, holidays, early_stopping)
        self.model: BoostedModel | None = None
        self.plugs = DEFAULT_PLUGS

    def _design(self, times) -> np.ndarray:
        cal = self.calendar(times)
        s = len(self.nodes)
        ids = np.tile(np.arange(s, dtype=np.float64), len(times))
        return np.column_stack([ids, np.repeat(cal, s, axis=0)])

    def _fit(self, panel: Panel, weights, jobs) -> None:
        self.nodes = panel.station_ids
        self.plugs = panel.plugs
        table = category_table(panel.plugs)
        flat = panel.values.reshape(-1, 4)
        obs = ~np.isnan(flat[:, 0])
        if not obs.any():
            raise ValueError("classifier: no observed cells in the training panel")
        labels = table.indices_of(round_rescale_many(flat[obs], panel.plugs))
        X = self._design(panel.times)[obs]
        w = np.repeat(weights, len(self.nodes))[obs]
        self.model = self._fit_model(X, labels, w, len(table))

    def _models(self):
        return {"classifier": self.model}

    def _state(self):
        return {"plugs": self.plugs}

    def _restore(self, state, models):
        self.model = models["classifier"]
        self.plugs = state["plugs"]

    def predict_labels(self, times) -> np.ndarray:
        return self.model.predict(self._design(pd.DatetimeIndex(times))).reshape(len(times), len(self.nodes))

    def _forecast(self, times):
        labels = self.predict_labels(times)
        return category_table(self.plugs).array[labels].astype(np.float64)


def _chain_order(order) -> tuple[int, ...]:
    idx = []
    for o in order:
        if isinstance(o, str):
            if o not in STATES:
                raise ValueError(f"chain order: unknown state {o!r}; states are {STATES}")
            o = STATES.index(o)
        if not 0 <= int(o) < len(STATES):
            raise ValueError(f"chain order: state index {o} out of range")
        idx.append(int(o))
    if not idx or len(set(idx)) != len(idx):
        raise ValueError(f"chain order must list distinct states, got {tuple(order)}")
    return tuple(idx)


class RegressorChain:
    """Regressors fitted in ``order``; model k sees the features plus targets 1..k-1.

    Fitting feeds the true earlier targets, prediction feeds the predicted ones.
    """

    def __init__(self, order=STATES, cfg: BoostConfig | None = None, early_stopping: EarlyStopping | None = None):
        self.order = _chain_order(order)
        self.cfg = cfg or BoostConfig()
        self.early_stopping = early_stopping
        self.models: list[BoostedModel] = []

    def fit(self, X, Y, weights=None) -> "RegressorChain":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[0] != X.shape[0] or Y.shape[1] <= max(self.order):
            raise ValueError("targets must be an (n, states) array covering the chain order")
        w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=np.float64)
        self.models = []
        for k, col in enumerate(self.order):
            Xk = np.hstack([X, Y[:, list(self.order[:k])]])
            self.models.append(fit_boosted(Xk, Y[:, col], w, self.cfg, self.early_stopping))
        return self

    def predict(self, X) -> np.ndarray:
        """(n, len(order)) predictions, columns in chain order."""
        X = np.asarray(X, dtype=np.float64)
        preds = np.empty((len(X), len(self.order)))
        for k, m in enumerate(self.models):
            preds[:, k] = m.predict(np.hstack([X, preds[:, :k]]))
        return preds


@register
class ChainForecaster(_Boosted):
    """One regressor chain per node of the area or global level."""

    kind = "chain"

    def __init__(self, level: str = "area", order=STATES, rounds: int = 100, max_depth: int = 6, learning_rate: float = 0.1,
                 min_samples_leaf: int = 5, l2_leaf: float = 1.0, features=FEATURE_NAMES, holidays=None, early_stopping=None):
        super().__init__(rounds, max_depth, learning_rate, min_samples_leaf, l2_leaf, features, holidays, early_stopping)
        if level not in ("area", "global"):
            raise ValueError(f"chain level must be 'area' or 'global', got {level!r}")
        self.level = level
        self.order = _chain_order(order)
        if sorted(self.order) != list(range(len(STATES))):
            raise ValueError("a chain forecaster must order all four states")
        self.chains: list[RegressorChain] = []

    @property
    def config(self) -> dict:
        return {**super().config, "level": self.level, "order": [STATES[i] for i in self.order]}

    def _fit(self, panel: Panel, weights, jobs) -> None:
        self.nodes, values = level_targets(panel, (self.level,))
        cal = self.calendar(panel.times)

        def one(n):
            Y = values[:, n]
            keep = np.isfinite(Y).all(axis=1)
            if not keep.any():
                raise ValueError(f"chain: node {self.nodes[n]!r} has no fully observed timestamp")
            return RegressorChain(self.order, self.boost_config(1), self.early_stopping).fit(cal[keep], Y[keep], weights[keep])

        self.chains = parallel_map(one, range(len(self.nodes)), jobs)

    def _models(self):
        return {f"n{n:02d}_{k}": m for n, c in enumerate(self.chains) for k, m in enumerate(c.models)}

    def _restore(self, state, models):
        self.chains = []
        for n in range(len(self.nodes)):
            c = RegressorChain(self.order, self.boost_config(1), self.early_stopping)
            c.models = [models[f"n{n:02d}_{k}"] for k in range(len(self.order))]
            self.chains.append(c)

    def _forecast(self, times):
        cal = self.calendar(times)
        out = np.empty((len(times), len(self.nodes), 4))
        for n, c in enumerate(self.chains):
            out[:, n][:, list(self.order)] = c.predict(cal)
        return out


@register
class LevelGBT(_Boosted):
    """One regressor per (level, state), pooled over the nodes of that level.

    The node's position within its level is an ordinal feature, so the default
    three levels give twelve models.
    """

    kind = "level_gbt"

    def __init__(self, levels=LEVELS, rounds: int = 150, max_depth: int = 4, learning_rate: float = 0.1,
                 min_samples_leaf: int = 5, l2_leaf: float = 1.0, features=FEATURE_NAMES, holidays=None, early_stopping=None):
        super().__init__(rounds, max_depth, learning_rate, min_samples_leaf, l2_leaf, features, holidays, early_stopping)
        self.levels = tuple(levels)
        if not self.levels or any(lv not in LEVELS for lv in self.levels):
            raise ValueError(f"levels must be drawn from {LEVELS}")
        self.models: dict[tuple[str, int], BoostedModel] = {}

    @property
    def config(self) -> dict:
        return {**super().config, "levels": list(self.levels)}

    def _design(self, cal: np.ndarray, n_nodes: int) -> np.ndarray:
        ids = np.tile(np.arange(n_nodes, dtype=np.float64), len(cal))
        return np.column_stack([ids, np.repeat(cal, n_nodes, axis=0)])

    def _fit(self, panel: Panel, weights, jobs) -> None:
        self.nodes, _ = level_targets(panel, self.levels)
        cal = self.calendar(panel.times)
        h = panel.hierarchy

        def one(job):
            lv, k = job
            _, vals = level_targets(panel, (lv,))
            n_nodes = vals.shape[1]
            X = self._design(cal, n_nodes)
            y = vals[:, :, k].reshape(-1)
            w = np.repeat(weights, n_nodes)
            keep = np.isfinite(y)
            if not keep.any():
                raise ValueError(f"level_gbt: no observed {STATES[k]} values at level {lv}")
            return self._fit_model(X[keep], y[keep], w[keep])

        jobs_list = [(lv, k) for lv in self.levels for k in range(4)]
        self.models = dict(zip(jobs_list, parallel_map(one, jobs_list, jobs)))
        self._sizes = {lv: len(h.level_nodes(lv)) for lv in self.levels}

    def _models(self):
        return {f"{lv}_{k}": m for (lv, k), m in self.models.items()}

    def _state(self):
        return {"sizes": self._sizes}

    def _restore(self, state, models):
        self._sizes = dict(state["sizes"])
        self.models = {(lv, k): models[f"{lv}_{k}"] for lv in self.levels for k in range(4)}

    def _forecast(self, times):
        cal = self.calendar(times)
        parts = []
        for lv in self.levels:
            n_nodes = self._sizes[lv]
            X = self._design(cal, n_nodes)
            block = np.empty((len(times), n_nodes, 4))
            for k in range(4):
                block[:, :, k] = self.models[(lv, k)].predict(X).reshape(len(times), n_nodes)
            parts.append(block)
        return np.concatenate(parts, axis=1)
