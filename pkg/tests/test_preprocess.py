import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_panel
from plugcast.preprocess import (
    FEATURE_NAMES,
    ImputationStrategy,
    emw_fill,
    featurize,
    impute,
    lag_matrix,
    load_holidays,
    rolling_smooth,
)


def _one_pass(x, window, span):
    """Fill the first ``window`` slots of every gap from the left, one by one."""
    alpha = 2 / (span + 1)
    out = list(x)
    n = len(out)
    i = 0
    while i < n:
        if not math.isnan(x[i]):
            i += 1
            continue
        j = i
        while j < n and math.isnan(x[j]):
            j += 1
        for k in range(i, min(j, i + window)):
            prev = [v for v in out[:k] if not math.isnan(v)][-window:][::-1]
            if not prev:
                break
            w = [(1 - alpha) ** m for m in range(len(prev))]
            out[k] = sum(a * b for a, b in zip(w, prev)) / sum(w)
        i = j
    return out


def _emw_oracle(x, window, span):
    fwd = _one_pass(x, window, span)
    bwd = _one_pass(x[::-1], window, span)[::-1]
    return [f if not math.isnan(f) else b for f, b in zip(fwd, bwd)]


series = st.lists(st.one_of(st.floats(0, 3), st.just(float("nan"))), min_size=1, max_size=80)


@settings(max_examples=300, deadline=None)
@given(series, st.integers(1, 10), st.integers(1, 12))
def test_emw_matches_oracle(x, window, span):
    got = emw_fill(np.array(x), window, span)
    want = np.array(_emw_oracle(x, window, span))
    assert np.array_equal(np.isnan(got), np.isnan(want))
    ok = ~np.isnan(want)
    assert np.allclose(got[ok], want[ok], rtol=1e-12, atol=1e-12)


def test_emw_keeps_known_values_and_long_gap_interior():
    x = np.r_[np.arange(10.0), np.full(40, np.nan), np.arange(10.0)]
    out = emw_fill(x)
    assert np.array_equal(out[:10], x[:10]) and np.array_equal(out[-10:], x[-10:])
    assert np.isnan(out[18:42]).all() and not np.isnan(out[10:18]).any() and not np.isnan(out[42:50]).any()


def test_emw_idempotent_when_every_gap_is_fillable():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 3, 300)
    x[rng.random(300) < 0.2] = np.nan
    x[0] = 1.0
    once = emw_fill(x)
    assert not np.isnan(once).any()
    assert np.array_equal(emw_fill(once), once)


def test_emw_two_dimensional_rows():
    x = np.array([[1, 2, 0, 0], [np.nan] * 4, [3, 0, 0, 0]], dtype=float)
    out = emw_fill(x, 1, 1)
    assert np.array_equal(out[1], x[0])
    assert np.isclose(out[1].sum(), 3)


def test_impute_strategies():
    rng = np.random.default_rng(1)
    panel = random_panel(rng, 4, 96 * 14, missing_rate=0.05)
    for kind in ("emw", "station_mean", "seasonal_median_residual"):
        out, rep = impute(panel, ImputationStrategy(kind))
        assert rep.cells_missing_before == int(panel.missing.sum())
        assert rep.cells_missing_after == 0
        known = ~panel.missing
        assert np.array_equal(out.values[known], panel.values[known])
        assert np.allclose(np.nansum(out.values, axis=2), 3)
    dropped, rep = impute(panel, ImputationStrategy("drop"))
    assert rep.timestamps_dropped == int(panel.missing.any(axis=1).sum())
    assert not dropped.missing.any()
    with pytest.raises(ValueError):
        ImputationStrategy("linear")


def test_impute_reports_unfillable_station():
    rng = np.random.default_rng(2)
    panel = random_panel(rng, 2, 50)
    v = panel.values.copy()
    v[:, 1] = np.nan
    out, rep = impute(panel.with_values(v))
    assert rep.unfillable_stations == ["st1"]
    assert out.missing[:, 1].all()


def test_rolling_smooth():
    x = np.arange(1.0, 13.0)
    out = rolling_smooth(x, 10)
    assert out[0] == 1 and out[1] == 1.5
    assert out[11] == np.mean(x[2:12])
    c = np.full(30, 2.5)
    assert np.allclose(rolling_smooth(c), 2.5)
    with pytest.raises(ValueError):
        rolling_smooth(x, 0)


def test_featurize_columns_and_values():
    times = pd.date_range("2020-12-24 23:45", periods=3, freq="15min")
    f = featurize(times)
    assert tuple(f.columns) == FEATURE_NAMES
    assert f["is_holiday"].tolist() == [0, 1, 1]
    assert f["trend"].tolist() == [0, 1, 2]
    assert np.isclose(f["tod_sin"].iloc[1], 0) and np.isclose(f["tod_cos"].iloc[1], 1)
    # Friday 2020-12-25 has dow 5
    assert np.isclose(f["dow_sin"].iloc[1], math.sin(2 * math.pi * 4 / 7))
    assert featurize(times, holidays=[])["is_holiday"].sum() == 0


def test_load_holidays(tmp_path):
    p = tmp_path / "h.txt"
    p.write_text("# comment\n2021-01-01\n\n2021-07-14  # national day\n")
    assert sorted(d.isoformat() for d in load_holidays(p)) == ["2021-01-01", "2021-07-14"]


def test_lag_matrix_respects_breaks():
    y = np.arange(10.0)
    X, t, pos = lag_matrix(y, 3)
    assert X[0].tolist() == [2, 1, 0] and t[0] == 3 and pos.tolist() == list(range(3, 10))
    times = pd.date_range("2021-01-01", periods=10, freq="15min")
    times = times[:5].append(times[5:] + pd.Timedelta(hours=1))
    X, t, pos = lag_matrix(y, 3, times)
    assert pos.tolist() == [3, 4, 8, 9]
    with pytest.raises(ValueError):
        lag_matrix(y[:3], 3)


def test_emw_worked_examples():
    assert emw_fill(np.r_[np.full(8, 3.0), np.nan])[-1] == 3.0
    assert emw_fill(np.array([np.nan, 5.0]), 1, 1).tolist() == [5.0, 5.0]
    vals = np.arange(1.0, 9.0)
    w = (1 - 2 / 9) ** np.arange(8)
    assert np.isclose(emw_fill(np.r_[vals, np.nan])[-1], (w * vals[::-1]).sum() / w.sum(), rtol=1e-15)


def test_drop_missing_counts():
    from plugcast.preprocess import drop_missing

    panel = random_panel(np.random.default_rng(5), 2, 10)
    assert drop_missing(panel).times.equals(panel.times)
    v = panel.values.copy()
    v[[1, 4, 7], 0] = np.nan
    assert len(drop_missing(panel.with_values(v)).times) == 7
    v[:, 1] = np.nan
    with pytest.raises(ValueError, match="emw"):
        drop_missing(panel.with_values(v))
