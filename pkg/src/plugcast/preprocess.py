"""Gap filling, smoothing and calendar / lag features."""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import STEPS_PER_DAY, Panel, calendar_index, contiguous_runs

logger = logging.getLogger(__name__)

# French public holidays for 2020 and 2021
FRENCH_HOLIDAYS = frozenset(
    dt.date.fromisoformat(d)
    for d in (
        "2020-01-01", "2020-04-13", "2020-05-01", "2020-05-08", "2020-05-21", "2020-06-01",
        "2020-07-14", "2020-08-15", "2020-11-01", "2020-11-11", "2020-12-25",
        "2021-01-01", "2021-04-05", "2021-05-01", "2021-05-08", "2021-05-13", "2021-05-24",
        "2021-07-14", "2021-08-15", "2021-11-01", "2021-11-11", "2021-12-25",
    )
)

FEATURE_NAMES = (
    "tod_sin", "tod_cos", "dow_sin", "dow_cos", "month_sin", "month_cos", "doy_sin", "doy_cos", "is_holiday", "trend",
)
CYCLIC_FEATURES = FEATURE_NAMES[:8]

IMPUTATION_KINDS = ("emw", "station_mean", "drop", "seasonal_median_residual")


@dataclass(frozen=True)
class ImputationStrategy:
    kind: str = "emw"
    window: int = 8
    span: int = 8

    def __post_init__(self):
        if self.kind not in IMPUTATION_KINDS:
            raise ValueError(f"unknown imputation strategy {self.kind!r}; choose from {IMPUTATION_KINDS}")
        if self.window < 1 or self.span < 1:
            raise ValueError("window and span must be at least 1")


@dataclass
class ImputeReport:
    strategy: str
    cells_missing_before: int = 0
    cells_missing_after: int = 0
    timestamps_dropped: int = 0
    unfillable_stations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def load_holidays(path) -> frozenset[dt.date]:
    """One ISO date per line; blank lines and ``#`` comments are ignored."""
    out = set()
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.add(dt.date.fromisoformat(line))
    return frozenset(out)


def _emw_mean(values: np.ndarray, alpha: float) -> np.ndarray:
    # values ordered most recent first
    # offsets from the newest value keep constant windows exact
    w = (1.0 - alpha) ** np.arange(len(values))
    ref = values[0]
    return ref + (w[:, None] * (values - ref)).sum(axis=0) / w.sum()


def _directional_fill(arr: np.ndarray, slots: list[np.ndarray], window: int, alpha: float) -> np.ndarray:
    """Fill ``slots`` (each ordered away from its known side) recursively."""
    out = arr.copy()
    known = ~np.isnan(out[:, 0])
    for gap_slots in slots:
        for i in gap_slots:
            # scan back from i over known rows, most recent first
            pos = np.flatnonzero(known[:i])[::-1][:window]
            if pos.size == 0:
                break
            out[i] = _emw_mean(out[pos], alpha)
            known[i] = True
    return out


def _gaps(missing: np.ndarray) -> list[tuple[int, int]]:
    edges = np.diff(np.concatenate([[0], missing.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def emw_fill(series: np.ndarray, window: int = 8, span: int = 8) -> np.ndarray:
    """Exponentially weighted fill of the edges of every gap.

    The first ``window`` slots of a gap get the weighted mean of the preceding
    ``window`` known values, weights ``(1 - alpha) ** i`` with ``i = 0`` for the
    most recent and ``alpha = 2 / (span + 1)``; each filled slot joins the window
    of the next one. The last ``window`` slots are filled the same way from the
    following values. The two passes run independently, forward fills win where
    they overlap, and the interior of a gap longer than ``2 * window`` stays NaN.

    ``series`` may be 1-d or ``(T, k)``; in the latter case a row is missing when
    it contains NaN and all columns share the weights.
    """
    if window < 1 or span < 1:
        raise ValueError("window and span must be at least 1")
    arr = np.asarray(series, dtype=np.float64)
    one_d = arr.ndim == 1
    x = arr[:, None] if one_d else arr.copy()
    missing = np.isnan(x).any(axis=1)
    x[missing] = np.nan
    if missing.all():
        logger.warning("emw_fill: series has no known values, left unchanged")
        return arr.copy()
    if not missing.any():
        return arr.copy()
    alpha = 2.0 / (span + 1.0)
    gaps = _gaps(missing)
    n = len(x)
    fwd_slots = [np.arange(a, min(b, a + window)) for a, b in gaps]
    # the backward pass is the same recursion on the reversed series
    bwd_slots = [n - 1 - np.arange(b - 1, max(a, b - window) - 1, -1) for a, b in reversed(gaps)]
    fwd = _directional_fill(x, fwd_slots, window, alpha)
    bwd = _directional_fill(x[::-1], bwd_slots, window, alpha)[::-1]
    out = np.where(np.isnan(fwd[:, :1]), bwd, fwd)
    return out[:, 0] if one_d else out


def drop_missing(panel: Panel) -> Panel:
    """Keep only timestamps at which every station is observed."""
    keep = ~panel.missing.any(axis=1)
    if not keep.any():
        raise ValueError("every timestamp has a MISSING cell; use emw or station_mean imputation instead of drop")
    return panel.select_times(keep)


def _seasonal_fill(panel: Panel) -> tuple[np.ndarray, list[str]]:
    values = panel.values.copy()
    tod, dow, _ = panel.calendar()
    bucket = (dow - 1) * STEPS_PER_DAY + tod
    unfillable = []
    for s, sid in enumerate(panel.station_ids):
        miss = np.isnan(values[:, s, 0])
        if not miss.any():
            continue
        if miss.all():
            unfillable.append(sid)
            continue
        obs = values[~miss, s]
        frame = pd.DataFrame(obs).groupby(bucket[~miss]).median()
        fallback = obs.mean(axis=0)
        fill = frame.reindex(bucket[miss]).to_numpy()
        rows = np.isnan(fill).any(axis=1)
        fill[rows] = fallback
        total = fill.sum(axis=1, keepdims=True)
        # component medians need not add up to the plug count
        fill = np.where(total > 0, fill * panel.plugs / np.where(total > 0, total, 1.0), panel.plugs / 4.0)
        values[miss, s] = fill
    return values, unfillable


def impute(panel: Panel, strategy: ImputationStrategy | None = None) -> tuple[Panel, ImputeReport]:
    strategy = strategy or ImputationStrategy()
    report = ImputeReport(strategy.kind, cells_missing_before=int(panel.missing.sum()))
    if strategy.kind == "drop":
        out = drop_missing(panel)
        report.timestamps_dropped = len(panel.times) - len(out.times)
    elif strategy.kind == "emw":
        values = panel.values.copy()
        for s, sid in enumerate(panel.station_ids):
            miss = np.isnan(values[:, s, 0])
            if miss.all():
                report.unfillable_stations.append(sid)
            elif miss.any():
                values[:, s] = emw_fill(values[:, s], strategy.window, strategy.span)
        out = panel.with_values(values)
    elif strategy.kind == "station_mean":
        values = panel.values.copy()
        for s, sid in enumerate(panel.station_ids):
            miss = np.isnan(values[:, s, 0])
            if miss.all():
                report.unfillable_stations.append(sid)
            elif miss.any():
                values[miss, s] = np.nanmean(values[:, s], axis=0)
        out = panel.with_values(values)
    else:
        values, report.unfillable_stations = _seasonal_fill(panel)
        out = panel.with_values(values)
    report.cells_missing_after = int(out.missing.sum())
    if report.unfillable_stations:
        logger.warning("stations without any observation left unfilled: %s", ", ".join(report.unfillable_stations))
    return out, report


def rolling_smooth(series: np.ndarray, window_steps: int = 10) -> np.ndarray:
    """Trailing mean over the last ``window_steps`` values (a shorter prefix at the start)."""
    if window_steps < 1:
        raise ValueError("window_steps must be at least 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    w = min(window_steps, len(x))
    padded = np.concatenate([np.zeros((w - 1,) + x.shape[1:]), x])
    sums = np.lib.stride_tricks.sliding_window_view(padded, w, axis=0).sum(axis=-1)
    counts = np.minimum(np.arange(1, len(x) + 1), w).astype(np.float64)
    return sums / counts.reshape((-1,) + (1,) * (x.ndim - 1))


def featurize(times: pd.DatetimeIndex, holidays=None, origin=None) -> pd.DataFrame:
    """Cyclic calendar encodings, a holiday flag and the trend index."""
    times = pd.DatetimeIndex(times)
    holidays = FRENCH_HOLIDAYS if holidays is None else frozenset(holidays)
    origin = times[0] if origin is None and len(times) else origin
    tod, dow, trend = calendar_index(times, origin if origin is not None else pd.Timestamp(0))
    month = times.month.to_numpy()
    doy = times.dayofyear.to_numpy()
    year_len = np.where(times.is_leap_year, 366, 365)
    angles = {
        "tod": 2 * np.pi * tod / STEPS_PER_DAY,
        "dow": 2 * np.pi * (dow - 1) / 7,
        "month": 2 * np.pi * (month - 1) / 12,
        "doy": 2 * np.pi * (doy - 1) / year_len,
    }
    cols = {}
    for name, a in angles.items():
        cols[f"{name}_sin"] = np.sin(a)
        cols[f"{name}_cos"] = np.cos(a)
    dates = times.normalize()
    hol = pd.DatetimeIndex(sorted(pd.Timestamp(d) for d in holidays))
    cols["is_holiday"] = dates.isin(hol).astype(np.int64)
    cols["trend"] = trend
    return pd.DataFrame(cols, index=times, columns=FEATURE_NAMES)


def lag_matrix(series: np.ndarray, n_lags: int, times: pd.DatetimeIndex | None = None):
    """Rows ``(y[t-1], ..., y[t-n_lags]) -> y[t]``.

    When ``times`` is given, rows whose lag window crosses a break in the
    15-minute spacing are left out. Returns ``(X, y, target_positions)``.
    """
    y = np.asarray(series, dtype=np.float64)
    if n_lags < 1:
        raise ValueError("n_lags must be at least 1")
    if len(y) <= n_lags:
        raise ValueError(f"series of length {len(y)} is too short for {n_lags} lags")
    runs = np.zeros(len(y), dtype=np.int64) if times is None else contiguous_runs(pd.DatetimeIndex(times))
    targets = np.arange(n_lags, len(y))
    targets = targets[runs[targets] == runs[targets - n_lags]]
    if targets.size == 0:
        raise ValueError(f"no contiguous run longer than {n_lags} steps")
    cols = [y[targets - k] for k in range(1, n_lags + 1)]
    return np.column_stack(cols), y[targets], targets
