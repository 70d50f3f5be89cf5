import numpy as np
import pandas as pd
import pytest

from helpers import random_panel
from plugcast.core import ForecastPanel, aggregate
from plugcast.ensemble import (
    DEFAULT_FIXED_WEIGHTS,
    ExpertSet,
    MLPolState,
    check_fixed_weights,
    fixed_weight_agg,
    mlpol_aggregate,
    mlpol_step,
    uniform_agg,
)


@pytest.fixture
def setup():
    rng = np.random.default_rng(0)
    truth = aggregate(random_panel(rng, 3, 60))
    panels = [ForecastPanel(truth.times, truth.nodes, truth.values + rng.normal(b, s, truth.values.shape))
              for b, s in [(0, 0.2), (0.5, 1.0), (-1, 2.0)]]
    return truth, ExpertSet(("good", "biased", "noisy"), tuple(panels))


def _mlpol_reference(F, y):
    """Scalar MLpol written out step by step."""
    k = F.shape[1]
    R = np.zeros(k)
    S = np.zeros(k)
    w = np.full(k, 1 / k)
    preds, ws = [], []
    for t in range(len(y)):
        ws.append(w.copy())
        p = float(w @ F[t])
        preds.append(p)
        r = abs(p - y[t]) - np.abs(F[t] - y[t])
        R += r
        S += r * r
        num = np.maximum(R, 0) / (1 + S)
        w = num / num.sum() if num.sum() > 0 else np.full(k, 1 / k)
    return np.array(preds), np.array(ws), w


def test_expert_set_validation(setup):
    truth, ex = setup
    p = ex.panels[0]
    with pytest.raises(ValueError):
        ExpertSet(("a", "a"), (p, p))
    with pytest.raises(ValueError):
        ExpertSet(("a", "b"), (p, p.select_times(p.times[:5])))
    bad = p.values.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ExpertSet(("a", "b"), (p, ForecastPanel(p.times, p.nodes, bad)))
    assert ex.stack().shape == (60, len(truth.nodes), 4, 3)


def test_uniform_and_fixed(setup):
    _, ex = setup
    u = uniform_agg(ex)
    assert np.allclose(u.values, sum(p.values for p in ex.panels) / 3)
    f = fixed_weight_agg(ex, DEFAULT_FIXED_WEIGHTS)
    assert np.allclose(f.values, sum(w * p.values for w, p in zip(DEFAULT_FIXED_WEIGHTS, ex.panels)))
    assert np.array_equal(fixed_weight_agg(ex, [1, 0, 0]).values, ex.panels[0].values)
    with pytest.raises(ValueError, match="sum to 1"):
        check_fixed_weights([0.5, 0.5, 0.5], 3)
    with pytest.raises(ValueError):
        check_fixed_weights([1.5, -0.5, 0], 3)
    with pytest.raises(ValueError):
        check_fixed_weights([0.5, 0.5], 3)


def test_mlpol_step_matches_reference():
    rng = np.random.default_rng(1)
    y = rng.normal(size=300)
    F = y[:, None] + rng.normal(0, [0.3, 1.0, 2.0], size=(300, 3))
    preds, _, w_final = _mlpol_reference(F, y)
    state = MLPolState.initial(3)
    for t in range(300):
        p, state = mlpol_step(state, F[t], y[t])
        assert np.isclose(p, preds[t], rtol=1e-12, atol=1e-12)
    assert np.allclose(state.weights, w_final, atol=1e-12)
    with pytest.raises(ValueError):
        mlpol_step(state, [np.nan, 0, 0], 0.0)


def test_mlpol_online_matches_scalar_reference(setup):
    truth, ex = setup
    res = mlpol_aggregate(ex, truth, "online")
    F = ex.stack()
    for n, s in [(0, 0), (4, 2), (len(truth.nodes) - 1, 3)]:
        preds, ws, w_final = _mlpol_reference(F[:, n, s], truth.values[:, n, s])
        assert np.allclose(res.panel.values[:, n, s], preds, atol=1e-12)
        assert np.allclose(res.weights[:, n, s], ws, atol=1e-12)
        assert np.allclose(res.final_weights[n, s], w_final, atol=1e-12)
    assert np.allclose(res.weights.sum(axis=-1), 1, atol=1e-12)


def test_mlpol_freeze(setup):
    truth, ex = setup
    window = truth.times[:30]
    res = mlpol_aggregate(ex, truth, "freeze", window)
    online = mlpol_aggregate(ex.__class__(ex.names, tuple(p.select_times(window) for p in ex.panels)), truth, "online")
    assert np.allclose(res.final_weights, online.final_weights)
    assert (res.weights == res.final_weights[None]).all()
    assert res.fit_trace.shape[0] == 30
    # freeze only needs truth over the window
    short = truth.select_times(window)
    assert np.array_equal(mlpol_aggregate(ex, short, "fit_then_freeze", window).panel.values, res.panel.values)
    empty = mlpol_aggregate(ex, short, "fit_then_freeze", pd.DatetimeIndex([]))
    assert np.allclose(empty.panel.values, uniform_agg(ex).values)
    with pytest.raises(ValueError):
        mlpol_aggregate(ex, short, "online")
    with pytest.raises(ValueError):
        mlpol_aggregate(ex, truth, "sometimes")


def test_mlpol_skips_nan_truth(setup):
    truth, ex = setup
    v = truth.values.copy()
    v[10:20, 0, 0] = np.nan
    res = mlpol_aggregate(ex, ForecastPanel(truth.times, truth.nodes, v), "online")
    assert np.array_equal(res.weights[11:21, 0, 0], np.repeat(res.weights[10:11, 0, 0], 10, axis=0))


def test_mlpol_prefers_the_perfect_expert():
    rng = np.random.default_rng(2)
    y = rng.normal(size=500)
    F = np.column_stack([y, y + 1, y - rng.uniform(0, 2, 500)])
    state = MLPolState.initial(3)
    for t in range(500):
        _, state = mlpol_step(state, F[t], y[t])
    assert state.weights[0] > 0.99


def test_trace_frame(setup, tmp_path):
    truth, ex = setup
    res = mlpol_aggregate(ex, truth, "online")
    df = res.trace_frame()
    assert list(df.columns) == ["timestamp", "node", "state", "expert", "weight"]
    assert len(df) == 60 * len(truth.nodes) * 4 * 3
    row = df.iloc[3 * 4 * 3 + 2 * 3 + 1]  # first timestamp, node 3, state 2, expert 1
    assert (row["node"], row["state"], row["expert"]) == (truth.nodes[3], "Passive", "biased")
    res.write_trace(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "timestamp,node,state,expert,weight"
