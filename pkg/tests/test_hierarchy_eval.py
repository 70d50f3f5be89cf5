import json

import numpy as np
import pandas as pd
import pytest

from helpers import random_panel
from plugcast.core import ForecastPanel, aggregate
from plugcast.hierarchy_eval import (
    BOARD_COLUMNS,
    board_json,
    bootstrap_ci,
    format_board,
    hierarchical_loss,
    leaderboard,
)


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    truth = aggregate(random_panel(rng, 5, 40))
    pred = ForecastPanel(truth.times, truth.nodes, truth.values + rng.normal(0, 1, truth.values.shape))
    return truth, pred


def test_perfect_forecast_scores_zero(pair):
    truth, _ = pair
    r = hierarchical_loss(truth, truth)
    assert r.total == 0 and r.total_sum == 0 and r.n_timestamps == 40


def test_decompositions_add_up(pair):
    truth, pred = pair
    r = hierarchical_loss(truth, pred)
    assert np.isclose(sum(r.by_level.values()), r.total, rtol=1e-12)
    assert np.isclose(sum(r.by_state.values()), r.total, rtol=1e-12)
    assert np.isclose(r.total_sum, r.total * r.n_timestamps, rtol=1e-12)
    assert np.isclose(sum(r.by_level_sum.values()), r.total_sum, rtol=1e-12)
    d = r.to_dict()
    assert set(d) >= {"total", "total_sum", "by_level", "by_state"}


def test_node_order_does_not_matter(pair):
    truth, pred = pair
    shuffled = pred.select_nodes(tuple(reversed(pred.nodes)))
    assert hierarchical_loss(truth, shuffled).total == hierarchical_loss(truth, pred).total
    with pytest.raises(ValueError):
        hierarchical_loss(truth, pred.select_nodes(pred.nodes[1:]))


def test_missing_truth_timestamps_excluded():
    rng = np.random.default_rng(1)
    panel = random_panel(rng, 3, 30, missing_rate=0.1)
    truth = aggregate(panel, strict=False)
    pred = ForecastPanel(truth.times, truth.nodes, np.nan_to_num(truth.values) + 1)
    r = hierarchical_loss(truth, pred)
    bad = panel.missing.any(axis=1)
    assert r.excluded_timestamps == int(bad.sum())
    assert r.n_timestamps == 30 - int(bad.sum())
    assert r.times.equals(truth.times[~bad])
    with pytest.raises(ValueError):
        hierarchical_loss(truth, ForecastPanel(truth.times, truth.nodes, truth.values))


def test_subset_and_time_mismatch(pair):
    truth, pred = pair
    sub = truth.times[::3]
    r = hierarchical_loss(truth, pred, sub)
    assert r.n_timestamps == len(sub)
    with pytest.raises(ValueError):
        hierarchical_loss(truth, pred.select_times(truth.times[:10]))


def test_leaderboard_sorted_and_raw(pair):
    truth, pred = pair
    worse = ForecastPanel(pred.times, pred.nodes, pred.values + 2)
    board = leaderboard({"b": worse, "a": pred, "oracle": truth}, truth)
    assert list(board.columns) == BOARD_COLUMNS
    assert list(board.index) == ["oracle", "a", "b"]
    raw = leaderboard({"a": pred}, truth, raw=True)
    assert np.isclose(raw.loc["a", "Total"], hierarchical_loss(truth, pred).total_sum)
    assert np.allclose(board[BOARD_COLUMNS[:4]].sum(axis=1), board["Total"])
    assert "oracle" in format_board(board)
    assert [row["entry"] for row in json.loads(board_json(board))] == ["oracle", "a", "b"]


def test_bootstrap_ci():
    rng = np.random.default_rng(2)
    x = rng.normal(10, 2, 500)
    ci = bootstrap_ci(x, 2000, 0.95, seed=1)
    assert ci["low"] < x.mean() < ci["high"]
    se = x.std(ddof=1) / np.sqrt(len(x))
    assert np.isclose(ci["high"] - ci["low"], 2 * 1.96 * se, rtol=0.15)
    assert bootstrap_ci(x, 200, seed=3) == bootstrap_ci(x, 200, seed=3)
    assert bootstrap_ci(np.full(10, 4.0))["low"] == 4.0
    with pytest.raises(ValueError):
        bootstrap_ci([])
    with pytest.raises(ValueError):
        bootstrap_ci(x, level=1.0)


def test_per_timestamp_frame(pair):
    truth, pred = pair
    df = hierarchical_loss(truth, pred).per_timestamp_frame()
    assert list(df.columns) == ["datetime", "loss"] and len(df) == 40
    assert df["datetime"].iloc[0] == pd.Timestamp(truth.times[0]).strftime("%Y-%m-%dT%H:%M:%S")
