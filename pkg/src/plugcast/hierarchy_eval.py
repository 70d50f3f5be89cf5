"""Hierarchical L1 scoring, leaderboards and bootstrap intervals."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import AREAS, GLOBAL, LEVELS, STATES, ForecastPanel

logger = logging.getLogger(__name__)

BOARD_COLUMNS = [*STATES, "Station", "Area", "Global", "Total"]


@dataclass
class ScoreReport:
    """Mean per-timestamp losses plus the raw per-timestamp totals.

    ``total`` and the two decompositions are means over the scored timestamps;
    ``total_sum`` is the plain sum of ``per_timestamp``.
    """

    total: float
    by_level: dict[str, float]
    by_state: dict[str, float]
    per_timestamp: np.ndarray = field(repr=False)
    n_timestamps: int
    times: pd.DatetimeIndex = field(repr=False, default=None)
    excluded_timestamps: int = 0

    @property
    def total_sum(self) -> float:
        return float(self.per_timestamp.sum())

    @property
    def by_level_sum(self) -> dict[str, float]:
        return {k: v * self.n_timestamps for k, v in self.by_level.items()}

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "total_sum": self.total_sum,
            "by_level": dict(self.by_level),
            "by_state": dict(self.by_state),
            "n_timestamps": self.n_timestamps,
            "excluded_timestamps": self.excluded_timestamps,
        }

    def per_timestamp_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"datetime": self.times.strftime("%Y-%m-%dT%H:%M:%S"), "loss": self.per_timestamp})


def node_levels(nodes) -> np.ndarray:
    return np.array(["global" if n == GLOBAL else "area" if n in AREAS else "station" for n in nodes])


def _align(truth: ForecastPanel, pred: ForecastPanel, times=None) -> tuple[ForecastPanel, ForecastPanel]:
    if tuple(truth.nodes) != tuple(pred.nodes):
        if set(truth.nodes) == set(pred.nodes):
            pred = pred.select_nodes(truth.nodes)
        else:
            missing = sorted(set(truth.nodes) ^ set(pred.nodes))
            raise ValueError(f"truth and prediction node axes differ (e.g. {missing[0]!r})")
    if times is not None:
        times = pd.DatetimeIndex(times)
        truth, pred = truth.select_times(times), pred.select_times(times)
    elif not truth.times.equals(pred.times):
        raise ValueError("truth and prediction time axes differ; pass the timestamps to score")
    return truth, pred


def hierarchical_loss(truth: ForecastPanel, pred: ForecastPanel, times=None) -> ScoreReport:
    """L1 distance over every node and state, averaged over timestamps.

    Timestamps where the truth has any unobserved cell are left out.
    """
    truth, pred = _align(truth, pred, times)
    if np.isnan(pred.values).any():
        raise ValueError("prediction contains NaN")
    ok = ~np.isnan(truth.values).any(axis=(1, 2))
    excluded = int((~ok).sum())
    if excluded:
        logger.info("scoring skips %d timestamps with unobserved truth", excluded)
    diff = np.abs(truth.values[ok] - pred.values[ok])
    n = int(ok.sum())
    per_t = diff.sum(axis=(1, 2))
    lv = node_levels(truth.nodes)
    denom = max(n, 1)
    by_level = {level: float(diff[:, lv == level].sum() / denom) for level in LEVELS}
    by_state = {s: float(diff[:, :, j].sum() / denom) for j, s in enumerate(STATES)}
    total = float(per_t.sum() / denom)
    return ScoreReport(total, by_level, by_state, per_t, n, truth.times[ok], excluded)


def leaderboard(entries: dict[str, ForecastPanel], truth: ForecastPanel, subset=None, raw: bool = False) -> pd.DataFrame:
    """One row per entry, ordered by total loss; ``raw`` reports sums instead of means."""
    rows = {}
    for name, fp in entries.items():
        r = hierarchical_loss(truth, fp, truth.times if subset is None else subset)
        scale = r.n_timestamps if raw else 1
        rows[name] = [
            *(r.by_state[s] * scale for s in STATES),
            r.by_level["station"] * scale,
            r.by_level["area"] * scale,
            r.by_level["global"] * scale,
            r.total * scale,
        ]
    board = pd.DataFrame.from_dict(rows, orient="index", columns=BOARD_COLUMNS)
    board.index.name = "entry"
    order = sorted(board.index, key=lambda k: (board.loc[k, "Total"], k))
    return board.loc[order]


def format_board(board: pd.DataFrame, digits: int = 3) -> str:
    return board.to_string(float_format=lambda v: f"{v:.{digits}f}") + "\n"


def board_json(board: pd.DataFrame) -> str:
    payload = [{"entry": name, **{c: float(row[c]) for c in board.columns}} for name, row in board.iterrows()]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def bootstrap_ci(per_timestamp, B: int = 1000, level: float = 0.95, seed: int = 0) -> dict[str, float]:
    """Percentile interval for the mean of ``per_timestamp`` by resampling timestamps."""
    x = np.asarray(per_timestamp, dtype=np.float64)
    if x.size == 0:
        raise ValueError("bootstrap_ci needs at least one value")
    if B < 1:
        raise ValueError("B must be at least 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n = x.size
    means = np.empty(B)
    chunk = max(1, 2_000_000 // n)
    for a in range(0, B, chunk):
        b = min(B, a + chunk)
        idx = rng.integers(0, n, size=(b - a, n))
        means[a:b] = x[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return {"low": float(low), "high": float(high), "point": float(x.mean()), "level": level, "B": B}
