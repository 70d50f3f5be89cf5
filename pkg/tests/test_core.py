import numpy as np
import pandas as pd
import pytest

from helpers import random_panel, stations
from plugcast.core import (
    AREAS,
    GLOBAL,
    ForecastPanel,
    Hierarchy,
    Panel,
    PlugStateVector,
    StationMeta,
    TimeKey,
    aggregate,
    bottom_up,
    calendar_index,
    coherence_check,
    contiguous_runs,
)


def test_node_order_and_empty_areas():
    h = Hierarchy(stations(3, n_areas=1))
    assert h.nodes == ("st0", "st1", "st2", *AREAS, GLOBAL)
    assert h.level_of("north") == "area"
    assert h.level_of(GLOBAL) == "global"
    p = random_panel(np.random.default_rng(0), 3, 5, n_areas=1)
    fp = aggregate(p)
    assert (fp.values[:, 4:7] == 0).all()  # areas without stations sum to zero


def test_unknown_area_and_duplicate_ids():
    with pytest.raises(ValueError, match="unknown area"):
        StationMeta("x", 0, 0, "centre")
    s = StationMeta("a", 0, 0, "south")
    with pytest.raises(ValueError):
        Hierarchy((s, s))
    with pytest.raises(ValueError):
        Hierarchy((StationMeta("north", 0, 0, "south"),))


def test_hierarchy_dict_roundtrip():
    h = Hierarchy(stations(4))
    assert Hierarchy.from_dict(h.to_dict()) == h


def test_plug_state_vector():
    v = PlugStateVector(1, 2, 0, 0)
    assert v.total == 3 and v.is_valid()
    assert not PlugStateVector(1, 1, 0, 0).is_valid()
    assert not PlugStateVector(-1, 4, 0, 0).is_valid()


def test_calendar_index_monday_is_one():
    times = pd.DatetimeIndex(["2021-01-04 00:00", "2021-01-10 23:45", "2021-01-11 00:15"])
    tod, dow, trend = calendar_index(times, times[0])
    assert list(tod) == [0, 95, 1]
    assert list(dow) == [1, 7, 1]
    assert list(trend) == [0, 7 * 96 - 1, 7 * 96 + 1]
    k = TimeKey.from_timestamp("2021-01-04 06:30", times[0])
    assert (k.tod, k.dow, k.trend) == (26, 1, 26)


def test_panel_rejects_bad_axes():
    st = stations(2)
    with pytest.raises(ValueError):
        Panel(pd.date_range("2021-01-01", periods=3, freq="15min"), st, np.zeros((3, 2, 3)))
    with pytest.raises(ValueError):
        Panel(pd.DatetimeIndex(["2021-01-01 00:15", "2021-01-01 00:00"]), st, np.zeros((2, 2, 4)))
    with pytest.raises(ValueError):
        Panel(pd.DatetimeIndex(["2021-01-01 00:07"]), st, np.zeros((1, 2, 4)))


def test_partial_nan_cell_becomes_missing():
    v = np.ones((2, 1, 4))
    v[0, 0, 2] = np.nan
    p = Panel(pd.date_range("2021-01-01", periods=2, freq="15min"), stations(1), v)
    assert p.missing.tolist() == [[True], [False]]
    assert not p.values.flags.writeable


def test_contiguous_runs():
    t = pd.DatetimeIndex(["2021-01-01 00:00", "2021-01-01 00:15", "2021-01-01 01:00", "2021-01-01 01:15"])
    runs = contiguous_runs(t)
    assert runs[0] == runs[1] != runs[2] == runs[3]


def test_aggregate_strict_and_lenient():
    p = random_panel(np.random.default_rng(1), 4, 10, missing_rate=0.3)
    with pytest.raises(ValueError, match="MISSING"):
        aggregate(p)
    fp = aggregate(p, strict=False)
    h = p.hierarchy
    bad_t = p.missing.any(axis=1)
    assert np.isnan(fp.values[bad_t, h.node_index(GLOBAL)]).all()


def test_bottom_up_is_coherent():
    rng = np.random.default_rng(2)
    h = Hierarchy(stations(7, rng=rng))
    st = rng.normal(size=(20, 7, 4))
    fp = ForecastPanel(pd.date_range("2021-01-01", periods=20, freq="15min"), h.nodes, bottom_up(st, h))
    rep = coherence_check(fp, h)
    assert rep.passed and rep.max_deviation <= 1e-12
    area = fp.values[:, h.level_slice("area")]
    assert np.allclose(area.sum(axis=1), fp.values[:, h.node_index(GLOBAL)])
    broken = fp.values.copy()
    broken[3, h.node_index("south"), 0] += 1
    assert not coherence_check(ForecastPanel(fp.times, fp.nodes, broken), h).passed


def test_forecast_panel_selection_and_overlay():
    rng = np.random.default_rng(3)
    p = random_panel(rng, 3, 6)
    fp = aggregate(p)
    sub = fp.select_nodes(["global", "st1"])
    assert sub.nodes == ("global", "st1")
    assert np.array_equal(sub.values[:, 1], p.values[:, 1])
    with pytest.raises(KeyError):
        fp.select_nodes(["nope"])
    with pytest.raises(KeyError):
        fp.select_times(pd.DatetimeIndex(["2030-01-01"]))
    patch = ForecastPanel(fp.times, ("global",), np.zeros((6, 1, 4)))
    merged = fp.overlay(patch)
    assert merged.nodes == fp.nodes
    assert (merged.select_nodes(["global"]).values == 0).all()
    assert np.array_equal(merged.reorder(p.hierarchy).values[:, :3], p.values)
