"""Small random panels and hierarchies for oracle tests."""
import numpy as np
import pandas as pd

from plugcast.core import AREAS, STATES, Panel, StationMeta
from plugcast.postprocess import category_table


def stations(n, n_areas=4, rng=None):
    rng = rng or np.random.default_rng(0)
    return tuple(
        StationMeta(f"st{i}", 48.8 + rng.uniform(-0.1, 0.1), 2.3 + rng.uniform(-0.1, 0.1), AREAS[int(rng.integers(n_areas))])
        for i in range(n)
    )


def random_panel(rng, n_stations=5, n_times=200, start="2021-01-04 00:00", missing_rate=0.0, plugs=3, n_areas=4):
    times = pd.date_range(start, periods=n_times, freq="15min")
    table = category_table(plugs).array
    values = table[rng.integers(len(table), size=(n_times, n_stations))].astype(float)
    if missing_rate:
        values[rng.random((n_times, n_stations)) < missing_rate] = np.nan
    return Panel(times, stations(n_stations, n_areas, rng), values, plugs)


def constant_panel(vector, n_stations=3, n_times=96 * 7, start="2021-01-04 00:00"):
    times = pd.date_range(start, periods=n_times, freq="15min")
    values = np.tile(np.asarray(vector, dtype=float), (n_times, n_stations, 1))
    return Panel(times, stations(n_stations), values)


__all__ = ["stations", "random_panel", "constant_panel", "STATES"]
