"""Per-(day-of-week, time-of-day) median and mean baselines."""
from __future__ import annotations

import logging
import warnings

import numpy as np
import pandas as pd

from ..core import LEVELS, STEPS_PER_DAY, Panel, calendar_index
from .base import Forecaster, level_targets, register

logger = logging.getLogger(__name__)

N_BUCKETS = 7 * STEPS_PER_DAY


def bucket_of(times) -> np.ndarray:
    tod, dow, _ = calendar_index(pd.DatetimeIndex(times), pd.Timestamp(0))
    return (dow - 1) * STEPS_PER_DAY + tod


def _reduce(x: np.ndarray, stat: str) -> np.ndarray:
    # x: (rows, series); NaN ignored, all-NaN columns give NaN
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(x, axis=0) if stat == "median" else np.nanmean(x, axis=0)


@register
class SeasonalStat(Forecaster):
    """Forecast each node and state by its training median (or mean) over the
    timestamps sharing the target's day of week and quarter hour.

    Buckets with no observation fall back to the node's overall training
    statistic; :meth:`fallback_mask` flags those cells.
    """

    kind = "seasonal"

    def __init__(self, stat: str = "median", levels=LEVELS):
        super().__init__()
        if stat not in ("median", "mean"):
            raise ValueError(f"stat must be 'median' or 'mean', got {stat!r}")
        levels = tuple(levels)
        bad = [lv for lv in levels if lv not in LEVELS]
        if bad or not levels:
            raise ValueError(f"levels must be drawn from {LEVELS}")
        self.stat = stat
        self.levels = levels
        self.table = None
        self.overall = None

    @property
    def config(self) -> dict:
        return {"stat": self.stat, "levels": list(self.levels)}

    @property
    def n_models(self) -> int:
        return len(self.nodes) * 4

    def _fit(self, panel: Panel, weights, jobs) -> None:
        self.nodes, values = level_targets(panel, self.levels)
        t, n, _ = values.shape
        flat = values.reshape(t, n * 4)
        buckets = bucket_of(panel.times)
        table = np.full((N_BUCKETS, n * 4), np.nan)
        order = np.argsort(buckets, kind="stable")
        b_sorted = buckets[order]
        starts = np.flatnonzero(np.r_[True, b_sorted[1:] != b_sorted[:-1]])
        stops = np.r_[starts[1:], len(order)]
        for a, b in zip(starts, stops):
            table[b_sorted[a]] = _reduce(flat[order[a:b]], self.stat)
        self.table = table.reshape(N_BUCKETS, n, 4)
        overall = _reduce(flat, self.stat)
        if np.isnan(overall).any():
            logger.warning("seasonal: %d series never observed, forecast as 0", int(np.isnan(overall).sum()))
        self.overall = np.nan_to_num(overall, nan=0.0).reshape(n, 4)

    def fallback_mask(self, times) -> np.ndarray:
        return np.isnan(self.table[bucket_of(times)])

    def _forecast(self, times: pd.DatetimeIndex) -> np.ndarray:
        out = self.table[bucket_of(times)]
        gap = np.isnan(out)
        if gap.any():
            out = np.where(gap, self.overall[None], out)
            logger.warning("seasonal: %d forecast cells fell back to the overall %s", int(gap.sum()), self.stat)
        return out

    def _state(self) -> dict:
        return {"table": self.table.reshape(N_BUCKETS, -1), "overall": self.overall}

    def _restore(self, state, models) -> None:
        n = len(self.nodes)
        self.table = np.array(state["table"], dtype=np.float64).reshape(N_BUCKETS, n, 4)
        self.overall = np.array(state["overall"], dtype=np.float64).reshape(n, 4)
