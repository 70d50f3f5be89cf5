"""Domain types and the station -> area -> global hierarchy.

Panels hold station-level plug-state counts as a dense ``(time, station, state)``
float array in which a missing cell is a row of NaN. Forecast panels hold one
real value per ``(time, node, state)`` over the full node order of a
:class:`Hierarchy`: stations, then the four areas, then the global node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd

STATES = ("Available", "Charging", "Passive", "Other")
AREAS = ("south", "north", "east", "west")
GLOBAL = "global"
LEVELS = ("station", "area", "global")
STEP = pd.Timedelta(minutes=15)
STEPS_PER_DAY = 96
DEFAULT_PLUGS = 3


class PlugStateVector(NamedTuple):
    """Plug counts of one station at one timestamp."""

    available: int
    charging: int
    passive: int
    other: int

    @property
    def total(self) -> int:
        return self.available + self.charging + self.passive + self.other

    def is_valid(self, plugs: int = DEFAULT_PLUGS) -> bool:
        return all(isinstance(v, (int, np.integer)) and v >= 0 for v in self) and self.total == plugs


@dataclass(frozen=True)
class StationMeta:
    station_id: str
    latitude: float
    longitude: float
    area: str

    def __post_init__(self):
        if self.area not in AREAS:
            raise ValueError(f"station {self.station_id!r}: unknown area {self.area!r}, expected one of {AREAS}")


@dataclass(frozen=True)
class TimeKey:
    timestamp: pd.Timestamp
    tod: int
    dow: int
    trend: int

    @classmethod
    def from_timestamp(cls, ts, origin) -> "TimeKey":
        ts = pd.Timestamp(ts)
        tod, dow, trend = calendar_index(pd.DatetimeIndex([ts]), origin)
        return cls(ts, int(tod[0]), int(dow[0]), int(trend[0]))


def calendar_index(times: pd.DatetimeIndex, origin) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (tod, dow, trend) integer arrays for ``times``.

    tod counts 15-minute steps within the day (0..95), dow runs from 1 for Monday
    to 7 for Sunday and trend counts 15-minute steps since ``origin``.
    """
    times = pd.DatetimeIndex(times)
    tod = (times.hour * 4 + times.minute // 15).to_numpy(dtype=np.int64)
    dow = (times.dayofweek + 1).to_numpy(dtype=np.int64)
    delta = (times - pd.Timestamp(origin)) / STEP
    trend = np.asarray(np.round(delta), dtype=np.int64)
    return tod, dow, trend


def time_keys(times: pd.DatetimeIndex, origin) -> list[TimeKey]:
    tod, dow, trend = calendar_index(times, origin)
    return [TimeKey(ts, int(a), int(b), int(c)) for ts, a, b, c in zip(times, tod, dow, trend)]


def check_quarter_hours(times: pd.DatetimeIndex) -> None:
    bad = np.flatnonzero((times.minute % 15 != 0) | (times.second != 0) | (times.microsecond != 0) | (times.nanosecond != 0))
    if bad.size:
        raise ValueError(f"timestamp {times[bad[0]]} is not on a 15-minute boundary")


def contiguous_runs(times: pd.DatetimeIndex) -> np.ndarray:
    """Run id per timestamp; a new run starts wherever spacing exceeds one step."""
    if len(times) == 0:
        return np.zeros(0, dtype=np.int64)
    gaps = np.diff(times.asi8) != STEP.value
    return np.concatenate([[0], np.cumsum(gaps)]).astype(np.int64)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Hierarchy:
    """Stations grouped into the four areas, plus one global node."""

    stations: tuple[StationMeta, ...]

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        ids = [s.station_id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ValueError("station ids must be unique within a hierarchy")
        if set(ids) & (set(AREAS) | {GLOBAL}):
            raise ValueError("station ids may not reuse area or global node names")

    @classmethod
    def from_stations(cls, stations: Iterable[StationMeta]) -> "Hierarchy":
        return cls(tuple(stations))

    @property
    def station_ids(self) -> tuple[str, ...]:
        return tuple(s.station_id for s in self.stations)

    @property
    def areas(self) -> tuple[str, ...]:
        return AREAS

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.station_ids + AREAS + (GLOBAL,)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_nodes(self) -> int:
        return self.n_stations + len(AREAS) + 1

    def members(self, area: str) -> np.ndarray:
        """Station positions belonging to ``area``."""
        return np.array([i for i, s in enumerate(self.stations) if s.area == area], dtype=np.int64)

    def level_slice(self, level: str) -> slice:
        s = self.n_stations
        return {"station": slice(0, s), "area": slice(s, s + len(AREAS)), "global": slice(s + len(AREAS), s + len(AREAS) + 1)}[level]

    def level_nodes(self, level: str) -> tuple[str, ...]:
        return self.nodes[self.level_slice(level)]

    def level_of(self, node: str) -> str:
        if node == GLOBAL:
            return "global"
        if node in AREAS:
            return "area"
        if node in self.station_ids:
            return "station"
        raise KeyError(node)

    def node_index(self, node: str) -> int:
        return self.nodes.index(node)

    def capacity(self) -> np.ndarray:
        """Total plugs behind each node for a panel with 3 plugs per station."""
        return self.capacity_for(DEFAULT_PLUGS)

    def capacity_for(self, plugs: int) -> np.ndarray:
        cap = [plugs] * self.n_stations + [plugs * len(self.members(a)) for a in AREAS] + [plugs * self.n_stations]
        return np.array(cap, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "stations": [
                {"station_id": s.station_id, "latitude": s.latitude, "longitude": s.longitude, "area": s.area}
                for s in self.stations
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hierarchy":
        return cls(tuple(StationMeta(**s) for s in d["stations"]))


@dataclass(frozen=True)
class Panel:
    """Station-level plug-state counts; a NaN row marks a MISSING cell."""

    times: pd.DatetimeIndex
    stations: tuple[StationMeta, ...]
    values: np.ndarray
    plugs: int = DEFAULT_PLUGS
    origin: pd.Timestamp | None = None

    def __post_init__(self):
        times = pd.DatetimeIndex(self.times)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "stations", tuple(self.stations))
        values = _readonly(self.values)
        if values.shape != (len(times), len(self.stations), len(STATES)):
            raise ValueError(f"values shape {values.shape} does not match ({len(times)}, {len(self.stations)}, 4)")
        # a cell is either fully observed or fully missing
        nan = np.isnan(values)
        if (nan.any(axis=2) != nan.all(axis=2)).any():
            values = values.copy()
            values[nan.any(axis=2)] = np.nan
            values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not times.is_monotonic_increasing or times.has_duplicates:
            raise ValueError("panel time axis must be strictly increasing")
        if len(times):
            check_quarter_hours(times)
        origin = self.origin if self.origin is not None else (times[0] if len(times) else pd.Timestamp(0))
        object.__setattr__(self, "origin", pd.Timestamp(origin))

    @property
    def hierarchy(self) -> Hierarchy:
        return Hierarchy(self.stations)

    @property
    def station_ids(self) -> tuple[str, ...]:
        return tuple(s.station_id for s in self.stations)

    @property
    def missing(self) -> np.ndarray:
        """(time, station) mask of MISSING cells."""
        return np.isnan(self.values[:, :, 0])

    @property
    def is_gapless(self) -> bool:
        return len(self.times) < 2 or bool((np.diff(self.times.asi8) == STEP.value).all())

    def calendar(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return calendar_index(self.times, self.origin)

    def time_keys(self) -> list[TimeKey]:
        return time_keys(self.times, self.origin)

    def with_values(self, values: np.ndarray) -> "Panel":
        return Panel(self.times, self.stations, values, self.plugs, self.origin)

    def select_times(self, selector) -> "Panel":
        """Restrict to a boolean mask, integer positions or a DatetimeIndex subset."""
        if isinstance(selector, pd.DatetimeIndex):
            pos = self.times.get_indexer(selector)
            if (pos < 0).any():
                raise KeyError(f"timestamp {selector[pos < 0][0]} not in panel")
        else:
            pos = np.asarray(selector)
            if pos.dtype == bool:
                pos = np.flatnonzero(pos)
        return Panel(self.times[pos], self.stations, self.values[pos], self.plugs, self.origin)

    def between(self, start, end) -> "Panel":
        mask = (self.times >= pd.Timestamp(start)) & (self.times <= pd.Timestamp(end))
        return self.select_times(mask)


@dataclass(frozen=True)
class ForecastPanel:
    """Real values per (time, node, state).

    ``nodes`` may be a subset of a hierarchy's node order (a fragment produced
    by a forecaster that models only some levels). NaN marks a cell without a
    value, which only happens for truth derived from a panel with MISSING cells.
    """

    times: pd.DatetimeIndex
    nodes: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "times", pd.DatetimeIndex(self.times))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        values = _readonly(self.values)
        if values.shape != (len(self.times), len(self.nodes), len(STATES)):
            raise ValueError(f"values shape {values.shape} does not match ({len(self.times)}, {len(self.nodes)}, 4)")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node in forecast panel")
        object.__setattr__(self, "values", values)

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def node_pos(self, nodes: Sequence[str]) -> np.ndarray:
        lookup = {n: i for i, n in enumerate(self.nodes)}
        try:
            return np.array([lookup[n] for n in nodes], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"node {exc.args[0]!r} not in forecast panel") from None

    def select_nodes(self, nodes: Sequence[str]) -> "ForecastPanel":
        return ForecastPanel(self.times, tuple(nodes), self.values[:, self.node_pos(nodes)])

    def select_times(self, times: pd.DatetimeIndex) -> "ForecastPanel":
        pos = self.times.get_indexer(pd.DatetimeIndex(times))
        if (pos < 0).any():
            raise KeyError(f"timestamp {pd.DatetimeIndex(times)[pos < 0][0]} not in forecast panel")
        return ForecastPanel(self.times[pos], self.nodes, self.values[pos])

    def overlay(self, other: "ForecastPanel") -> "ForecastPanel":
        """Nodes of ``other`` replace or extend ours; time axes must agree."""
        if not self.times.equals(other.times):
            raise ValueError("cannot overlay forecast panels with different time axes")
        nodes = list(self.nodes) + [n for n in other.nodes if n not in self.nodes]
        values = np.full((len(self.times), len(nodes), len(STATES)), np.nan)
        values[:, : len(self.nodes)] = self.values
        idx = {n: i for i, n in enumerate(nodes)}
        values[:, [idx[n] for n in other.nodes]] = other.values
        return ForecastPanel(self.times, tuple(nodes), values)

    def reorder(self, hierarchy: Hierarchy) -> "ForecastPanel":
        """Return the full-hierarchy panel in canonical node order."""
        missing = [n for n in hierarchy.nodes if n not in self.nodes]
        if missing:
            raise ValueError(f"forecast panel lacks node {missing[0]!r}")
        return self.select_nodes(hierarchy.nodes)


def _area_totals(station_values: np.ndarray, hierarchy: Hierarchy) -> np.ndarray:
    t = station_values.shape[0]
    out = np.zeros((t, len(AREAS), station_values.shape[2]))
    for j, area in enumerate(AREAS):
        idx = hierarchy.members(area)
        if idx.size:
            out[:, j] = station_values[:, idx].sum(axis=1)
    return out


def _global_total(area_values: np.ndarray) -> np.ndarray:
    total = area_values[:, 0].copy()
    for j in range(1, area_values.shape[1]):
        total = total + area_values[:, j]
    return total


def bottom_up(station_values: np.ndarray, hierarchy: Hierarchy) -> np.ndarray:
    """Stack station values with their area and global sums -> (T, nodes, 4)."""
    station_values = np.asarray(station_values, dtype=np.float64)
    if station_values.ndim != 3 or station_values.shape[1] != hierarchy.n_stations:
        raise ValueError(f"expected (T, {hierarchy.n_stations}, 4) station values, got {station_values.shape}")
    areas = _area_totals(station_values, hierarchy)
    glob = _global_total(areas)[:, None, :]
    return np.concatenate([station_values, areas, glob], axis=1)


def aggregate(panel: Panel, hierarchy: Hierarchy | None = None, strict: bool = True) -> ForecastPanel:
    """Full node representation of a station panel.

    With ``strict`` a MISSING cell raises; otherwise it propagates as NaN into
    the parent area and the global node at that timestamp.
    """
    hierarchy = hierarchy or panel.hierarchy
    if tuple(panel.station_ids) != hierarchy.station_ids:
        raise ValueError("panel stations do not match hierarchy stations")
    if strict:
        miss = panel.missing
        if miss.any():
            t, s = np.argwhere(miss)[0]
            raise ValueError(f"MISSING cell at {panel.times[t]} for station {panel.station_ids[s]!r}; impute or drop first")
    return ForecastPanel(panel.times, hierarchy.nodes, bottom_up(panel.values, hierarchy))


def forecast_from_stations(times: pd.DatetimeIndex, station_values: np.ndarray, hierarchy: Hierarchy) -> ForecastPanel:
    return ForecastPanel(times, hierarchy.nodes, bottom_up(station_values, hierarchy))


@dataclass(frozen=True)
class CoherenceReport:
    max_area_deviation: float
    max_global_deviation: float
    tol: float

    @property
    def max_deviation(self) -> float:
        return max(self.max_area_deviation, self.max_global_deviation)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def coherence_check(fp: ForecastPanel, hierarchy: Hierarchy, tol: float = 1e-9) -> CoherenceReport:
    """Measure how far area/global values are from the sums of their children."""
    if tuple(fp.nodes) != hierarchy.nodes:
        raise ValueError("forecast node axis does not match hierarchy node order")
    v = fp.values
    st = v[:, hierarchy.level_slice("station")]
    ar = v[:, hierarchy.level_slice("area")]
    gl = v[:, hierarchy.level_slice("global")][:, 0]
    dev_area = np.abs(ar - _area_totals(st, hierarchy))
    dev_glob = np.abs(gl - _global_total(ar))
    return CoherenceReport(
        float(np.nanmax(dev_area, initial=0.0)), float(np.nanmax(dev_glob, initial=0.0)), tol
    )
