"""Panel CSV I/O, chronological splits and the synthetic panel generator."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .core import (
    AREAS,
    DEFAULT_PLUGS,
    STATES,
    STEP,
    STEPS_PER_DAY,
    ForecastPanel,
    Panel,
    StationMeta,
    calendar_index,
)

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ["datetime", "area", "Station", "Latitude", "Longitude", "tod", "dow", "trend", *STATES]
FORECAST_COLUMNS = ["datetime", "node", "state", "value"]
ISO = "%Y-%m-%dT%H:%M:%S"
SCHEMA_VERSION = 1
_SUM_TOL = 1e-6


@dataclass
class IngestReport:
    rows_read: int = 0
    cells_missing: int = 0
    cells_rejected: int = 0
    first_timestamp: str | None = None
    last_timestamp: str | None = None
    duplicate_rows: int = 0
    absent_timestamps: int = 0
    cells_fractional: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _parse_times(col: pd.Series) -> pd.DatetimeIndex:
    try:
        times = pd.to_datetime(col, format="ISO8601")
    except (ValueError, TypeError):
        times = pd.to_datetime(col, utc=False)
    times = pd.DatetimeIndex(times)
    if times.tz is not None:
        # wall-clock local time is kept; the offset is dropped
        times = times.tz_localize(None)
    return times


def read_panel(path, plugs: int = DEFAULT_PLUGS) -> tuple[Panel, IngestReport]:
    """Read a panel CSV into a dense Panel.

    Rows whose four state counts are incomplete, negative or do not sum to the
    plug count become MISSING and are counted as rejected. Timestamps with no
    row at all are MISSING for every station.
    """
    df = pd.read_csv(path, dtype={"Station": str, "area": str}, float_precision="round_trip")
    if "datetime" not in df.columns and "date" in df.columns:
        df = df.rename(columns={"date": "datetime"})
    required = ["datetime", "area", "Station", "Latitude", "Longitude", *STATES]
    absent = [c for c in required if c not in df.columns]
    if absent:
        raise ValueError(f"{path}: malformed header, missing column(s) {', '.join(absent)}")
    report = IngestReport(rows_read=len(df))
    if df.empty:
        raise ValueError(f"{path}: no data rows")

    times = _parse_times(df["datetime"])
    bad = np.flatnonzero(
        (times.minute % 15 != 0) | (times.second != 0) | (times.microsecond != 0) | (times.nanosecond != 0)
    )
    if bad.size:
        raise ValueError(f"{path}: row {bad[0] + 2} has timestamp {df['datetime'].iloc[bad[0]]!r} not on a 15-minute step")

    df = df.assign(datetime=times)
    dup = df.duplicated(subset=["datetime", "Station"], keep="first")
    report.duplicate_rows = int(dup.sum())
    if report.duplicate_rows:
        logger.warning("%s: %d duplicated (datetime, station) rows ignored", path, report.duplicate_rows)
        df = df.loc[~dup]

    stations = []
    for sid, grp in df.groupby("Station", sort=False):
        first = grp.iloc[0]
        stations.append(StationMeta(str(sid), float(first["Latitude"]), float(first["Longitude"]), str(first["area"]).strip().lower()))
    station_pos = {s.station_id: i for i, s in enumerate(stations)}

    axis = pd.date_range(df["datetime"].min(), df["datetime"].max(), freq=STEP)
    values = np.full((len(axis), len(stations), len(STATES)), np.nan)
    vals = df[list(STATES)].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    all_empty = np.isnan(vals).all(axis=1)
    complete = ~np.isnan(vals).any(axis=1)
    ok = complete & (vals >= 0).all(axis=1) & (np.abs(vals.sum(axis=1) - plugs) <= _SUM_TOL)
    rejected = ~ok & ~all_empty
    report.cells_rejected = int(rejected.sum())
    report.cells_fractional = int((ok & (vals != np.round(vals)).any(axis=1)).sum())
    t_pos = axis.get_indexer(pd.DatetimeIndex(df["datetime"]))
    s_pos = df["Station"].map(station_pos).to_numpy()
    values[t_pos[ok], s_pos[ok]] = vals[ok]

    seen = np.zeros(len(axis), dtype=bool)
    seen[t_pos] = True
    report.absent_timestamps = int((~seen).sum())
    report.cells_missing = int(np.isnan(values[:, :, 0]).sum())
    report.first_timestamp = axis[0].strftime(ISO)
    report.last_timestamp = axis[-1].strftime(ISO)

    origin = axis[0]
    if "trend" in df.columns:
        trend = pd.to_numeric(df["trend"], errors="coerce").to_numpy()
        first = int(np.argmin(t_pos))
        if np.isfinite(trend[first]) and float(trend[first]).is_integer():
            origin = axis[0] - int(trend[first]) * STEP
    return Panel(axis, tuple(stations), values, plugs, origin), report


def _format_states(values: np.ndarray) -> dict[str, pd.Series]:
    out = {}
    for j, name in enumerate(STATES):
        col = values[:, j]
        finite = col[~np.isnan(col)]
        if np.array_equal(finite, np.round(finite)):
            out[name] = pd.array(np.where(np.isnan(col), 0, col).astype(np.int64), dtype="Int64")
            out[name][np.isnan(col)] = pd.NA
        else:
            out[name] = col
    return out


def panel_frame(panel: Panel) -> pd.DataFrame:
    t, s = len(panel.times), len(panel.stations)
    tod, dow, trend = panel.calendar()
    flat = panel.values.reshape(t * s, len(STATES))
    data = {
        "datetime": np.repeat(panel.times.strftime(ISO).to_numpy(), s),
        "area": np.tile([m.area for m in panel.stations], t),
        "Station": np.tile([m.station_id for m in panel.stations], t),
        "Latitude": np.tile([m.latitude for m in panel.stations], t),
        "Longitude": np.tile([m.longitude for m in panel.stations], t),
        "tod": np.repeat(tod, s),
        "dow": np.repeat(dow, s),
        "trend": np.repeat(trend, s),
    }
    data.update(_format_states(flat))
    return pd.DataFrame(data, columns=PANEL_COLUMNS)


def write_panel(panel: Panel, path) -> None:
    panel_frame(panel).to_csv(path, index=False, lineterminator="\n")


def write_forecast(fp: ForecastPanel, path) -> None:
    t, n = len(fp.times), len(fp.nodes)
    df = pd.DataFrame(
        {
            "datetime": np.repeat(fp.times.strftime(ISO).to_numpy(), n * 4),
            "node": np.tile(np.repeat(np.array(fp.nodes, dtype=object), 4), t),
            "state": np.tile(np.array(STATES, dtype=object), t * n),
            "value": fp.values.reshape(-1),
        },
        columns=FORECAST_COLUMNS,
    )
    df.to_csv(path, index=False, lineterminator="\n")


def read_forecast(path) -> ForecastPanel:
    df = pd.read_csv(path, dtype={"node": str, "state": str}, float_precision="round_trip")
    absent = [c for c in FORECAST_COLUMNS if c not in df.columns]
    if absent:
        raise ValueError(f"{path}: malformed header, missing column(s) {', '.join(absent)}")
    bad_state = ~df["state"].isin(STATES)
    if bad_state.any():
        raise ValueError(f"{path}: unknown state {df['state'][bad_state].iloc[0]!r}")
    times = _parse_times(df["datetime"])
    axis = pd.DatetimeIndex(pd.unique(times)).sort_values()
    nodes = tuple(pd.unique(df["node"]))
    values = np.full((len(axis), len(nodes), len(STATES)), np.nan)
    t_pos = axis.get_indexer(times)
    n_pos = pd.Index(nodes).get_indexer(df["node"])
    s_pos = pd.Index(STATES).get_indexer(df["state"])
    values[t_pos, n_pos, s_pos] = df["value"].to_numpy(dtype=np.float64)
    return ForecastPanel(axis, nodes, values)


def write_index(times: pd.DatetimeIndex, path) -> None:
    pd.DataFrame({"datetime": pd.DatetimeIndex(times).strftime(ISO)}).to_csv(path, index=False, lineterminator="\n")


def read_index(path) -> pd.DatetimeIndex:
    df = pd.read_csv(path)
    col = "datetime" if "datetime" in df.columns else df.columns[0]
    return pd.DatetimeIndex(_parse_times(df[col])).sort_values()


# splits ---------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_start: pd.Timestamp
    train_end: pd.Timestamp
    test_start: pd.Timestamp
    test_end: pd.Timestamp
    public_fraction_of_middle: float = 0.2
    period_boundaries: tuple[pd.Timestamp, pd.Timestamp] | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("train_start", "train_end", "test_start", "test_end"):
            object.__setattr__(self, name, pd.Timestamp(getattr(self, name)))
        if self.period_boundaries is not None:
            b = tuple(pd.Timestamp(x) for x in self.period_boundaries)
            if len(b) != 2 or not (self.test_start <= b[0] <= b[1] <= self.test_end):
                raise ValueError("period boundaries must be two ordered datetimes inside the test range")
            object.__setattr__(self, "period_boundaries", b)
        if not self.train_start <= self.train_end < self.test_start <= self.test_end:
            raise ValueError("split ranges must satisfy train_start <= train_end < test_start <= test_end")
        if not 0.0 <= self.public_fraction_of_middle <= 1.0:
            raise ValueError("public_fraction_of_middle must lie in [0, 1]")

    @classmethod
    def challenge(cls, seed: int = 0) -> "SplitSpec":
        return cls("2020-07-03 00:00", "2021-02-18 23:45", "2021-02-19 00:00", "2021-03-10 23:45", 0.2, None, seed)

    @classmethod
    def tail(cls, panel: Panel, test_days: int, seed: int = 0, public_fraction: float = 0.2) -> "SplitSpec":
        """Hold out the last ``test_days`` days of ``panel`` as the test range."""
        test_start = panel.times[-1] - pd.Timedelta(days=test_days) + STEP
        return cls(panel.times[0], test_start - STEP, test_start, panel.times[-1], public_fraction, None, seed)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "train_start": self.train_start.strftime(ISO),
            "train_end": self.train_end.strftime(ISO),
            "test_start": self.test_start.strftime(ISO),
            "test_end": self.test_end.strftime(ISO),
            "public_fraction_of_middle": self.public_fraction_of_middle,
            "period_boundaries": None if self.period_boundaries is None else [b.strftime(ISO) for b in self.period_boundaries],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        d = {k: v for k, v in d.items() if k != "schema"}
        if d.get("period_boundaries") is not None:
            d["period_boundaries"] = tuple(d["period_boundaries"])
        return cls(**d)


class Splits(NamedTuple):
    train: Panel
    test: Panel
    public: pd.DatetimeIndex
    private: pd.DatetimeIndex


def make_splits(panel: Panel, spec: SplitSpec) -> Splits:
    """Train panel plus a public/private partition of the test timestamps.

    The first test period goes to public, the third to private, and a seeded
    uniform draw sends ``public_fraction_of_middle`` of the middle period to
    public. Without explicit boundaries the test range is cut into thirds by
    timestamp count.
    """
    if spec.train_start < panel.times[0] or spec.test_end > panel.times[-1]:
        raise ValueError(f"split range [{spec.train_start}, {spec.test_end}] exceeds panel range [{panel.times[0]}, {panel.times[-1]}]")
    train = panel.between(spec.train_start, spec.train_end)
    test = panel.between(spec.test_start, spec.test_end)
    t = test.times
    if spec.period_boundaries is None:
        n = len(t)
        first = np.arange(n) < n // 3
        third = np.arange(n) >= (2 * n) // 3
    else:
        b1, b2 = spec.period_boundaries
        first = t < b1
        third = t >= b2
    middle = np.flatnonzero(~first & ~third)
    n_pub = int(round(spec.public_fraction_of_middle * len(middle)))
    rng = np.random.default_rng(spec.seed)
    drawn = np.zeros(len(t), dtype=bool)
    if n_pub:
        drawn[rng.choice(middle, size=n_pub, replace=False)] = True
    public = first | drawn
    return Splits(train, test, t[public], t[~public])


def benchmark_split(panel: Panel, train_fraction: float = 0.95) -> tuple[Panel, Panel]:
    """Chronological prefix/suffix split at floor(train_fraction * n)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    # exact decimal arithmetic so 0.95 * 1000 is 950, not 949
    cut = math.floor(Fraction(str(train_fraction)) * len(panel.times))
    n = len(panel.times)
    return panel.select_times(np.arange(cut)), panel.select_times(np.arange(cut, n))


# synthetic generator --------------------------------------------------------

DEFAULT_TRANSITIONS = (
    (0.970, 0.025, 0.000, 0.005),
    (0.040, 0.900, 0.060, 0.000),
    (0.080, 0.000, 0.920, 0.000),
    (0.020, 0.000, 0.000, 0.980),
)
PARIS = (48.8566, 2.3522)


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic plug-state simulator.

    Each plug follows a Markov chain over (available, charging, passive, other).
    Leaving the available state is scaled by a time-of-day bump, a weekend
    dip and a per-station activity factor. Malfunctioning stations lock every
    plug into ``available`` or ``other``; after ``changepoint`` locked cells are
    reported MISSING with probability ``missing_rate_after_changepoint``.
    Without an explicit ``changepoint`` it defaults to 60% of the way through.
    """

    n_stations: int = 10
    n_areas: int = 4
    start: pd.Timestamp = pd.Timestamp("2020-09-01 00:00")
    end: pd.Timestamp = pd.Timestamp("2020-10-30 23:45")
    transition_base: tuple = DEFAULT_TRANSITIONS
    tod_amplitude: float = 0.8
    dow_amplitude: float = 0.3
    station_heterogeneity: float = 0.5
    malfunction_probability: float = 0.3
    lock_min_days: float = 7.0
    lock_max_days: float = 30.0
    changepoint: pd.Timestamp | None = None
    missing_rate_after_changepoint: float = 0.8
    plugs: int = DEFAULT_PLUGS
    seed: int = 0

    def __post_init__(self):
        for name in ("start", "end"):
            object.__setattr__(self, name, pd.Timestamp(getattr(self, name)))
        if self.changepoint is None:
            # default: midnight closest to 60% of the simulated range
            cp = (self.start + 0.6 * (self.end - self.start)).round("D")
            object.__setattr__(self, "changepoint", cp)
        object.__setattr__(self, "changepoint", pd.Timestamp(self.changepoint))
        p = np.asarray(self.transition_base, dtype=np.float64)
        if p.shape != (4, 4) or (p < 0).any() or not np.allclose(p.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition_base must be a 4x4 row-stochastic matrix")
        object.__setattr__(self, "transition_base", tuple(tuple(float(x) for x in row) for row in p))
        for name in ("malfunction_probability", "missing_rate_after_changepoint"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 1 <= self.n_areas <= len(AREAS):
            raise ValueError("n_areas must be between 1 and 4")
        if self.n_stations < 1 or self.plugs < 1:
            raise ValueError("n_stations and plugs must be positive")
        if self.end < self.start:
            raise ValueError("end precedes start")
        if not 0 < self.lock_min_days <= self.lock_max_days:
            raise ValueError("lock durations must satisfy 0 < min <= max")

    @classmethod
    def challenge(cls, seed: int = 0) -> "GeneratorConfig":
        """91 stations over the challenge date range."""
        return cls(n_stations=91, start="2020-07-03 00:00", end="2021-03-10 23:45", changepoint="2020-10-22 00:00", seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("start", "end", "changepoint"):
            d[name] = getattr(self, name).strftime(ISO)
        d["transition_base"] = [list(r) for r in self.transition_base]
        return {"schema": SCHEMA_VERSION, **d}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = {k: v for k, v in d.items() if k != "schema"}
        if "transition_base" in d:
            d["transition_base"] = tuple(tuple(r) for r in d["transition_base"])
        return cls(**d)


@dataclass(frozen=True)
class Lock:
    station: int
    state: int
    start: int
    stop: int  # exclusive position on the time axis


@dataclass(frozen=True)
class Simulation:
    panel: Panel
    complete: Panel
    locks: tuple[Lock, ...] = field(default=())
    changepoint_pos: int = 0


def _make_stations(cfg: GeneratorConfig, rng: np.random.Generator) -> tuple[StationMeta, ...]:
    out = []
    for i in range(cfg.n_stations):
        area = AREAS[i % cfg.n_areas]
        lat = PARIS[0] + rng.uniform(-0.04, 0.04)
        lon = PARIS[1] + rng.uniform(-0.06, 0.06)
        out.append(StationMeta(f"S{i:03d}", round(lat, 6), round(lon, 6), area))
    return tuple(out)


def simulate(cfg: GeneratorConfig) -> Simulation:
    """Run the simulator and keep the ground truth behind the missingness."""
    meta_rng, chain_rng, lock_rng, miss_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4))
    stations = _make_stations(cfg, meta_rng)
    times = pd.date_range(cfg.start, cfg.end, freq=STEP)
    n_t, n_s, n_p = len(times), cfg.n_stations, cfg.plugs

    base = np.asarray(cfg.transition_base)
    tod, dow, _ = calendar_index(times, times[0])
    bump = 1.0 + cfg.tod_amplitude * np.cos(2 * np.pi * (tod - 56) / STEPS_PER_DAY)
    weekend = np.where(dow >= 6, 1.0 - cfg.dow_amplitude, 1.0)
    modulation = np.clip(bump * weekend, 0.0, None)
    activity = np.exp(chain_rng.uniform(-1.0, 1.0, size=n_s) * cfg.station_heterogeneity)
    plug_activity = np.repeat(activity, n_p)

    state = np.zeros(n_s * n_p, dtype=np.int64)
    uniforms = chain_rng.random((n_t, n_s * n_p))
    plug_states = np.empty((n_t, n_s * n_p), dtype=np.int64)
    offdiag_a = base[0].copy()
    offdiag_a[0] = 0.0
    for t in range(n_t):
        rows = base[state].copy()
        in_a = state == 0
        if in_a.any():
            scaled = offdiag_a[None, :] * (modulation[t] * plug_activity[in_a])[:, None]
            total = scaled.sum(axis=1, keepdims=True)
            scaled = np.where(total > 1.0, scaled / np.where(total > 0, total, 1.0), scaled)
            scaled[:, 0] = 1.0 - scaled[:, 1:].sum(axis=1)
            rows[in_a] = scaled
        cum = np.cumsum(rows, axis=1)
        state = np.minimum((uniforms[t][:, None] >= cum).sum(axis=1), 3)
        plug_states[t] = state

    counts = np.zeros((n_t, n_s, 4))
    per_station = plug_states.reshape(n_t, n_s, n_p)
    for k in range(4):
        counts[:, :, k] = (per_station == k).sum(axis=2)

    locks = []
    for s in range(n_s):
        if lock_rng.random() < cfg.malfunction_probability:
            start = int(lock_rng.integers(0, n_t))
            days = lock_rng.uniform(cfg.lock_min_days, cfg.lock_max_days)
            stop = min(n_t, start + int(round(days * STEPS_PER_DAY)))
            lock_state = 0 if lock_rng.random() < 0.5 else 3
            locks.append(Lock(s, lock_state, start, stop))
            locked = np.zeros(4)
            locked[lock_state] = n_p
            counts[start:stop, s] = locked

    cp = int(np.searchsorted(times.asi8, cfg.changepoint.value))
    observed = counts.copy()
    draws = miss_rng.random((n_t, n_s))
    for lk in locks:
        lo = max(lk.start, cp)
        if lo < lk.stop:
            hit = draws[lo : lk.stop, lk.station] < cfg.missing_rate_after_changepoint
            observed[np.arange(lo, lk.stop)[hit], lk.station] = np.nan

    complete = Panel(times, stations, counts, cfg.plugs)
    panel = Panel(times, stations, observed, cfg.plugs)
    return Simulation(panel, complete, tuple(locks), cp)


def generate(cfg: GeneratorConfig) -> Panel:
    return simulate(cfg).panel


def load_json_config(path) -> dict:
    d = json.loads(Path(path).read_text())
    if not isinstance(d, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    schema = d.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported config schema {schema!r}")
    return d
