"""State <-> category codec and integer projection of station forecasts."""
from __future__ import annotations

import itertools
import logging
from functools import lru_cache

import numpy as np

from .core import DEFAULT_PLUGS, ForecastPanel, Hierarchy, PlugStateVector, bottom_up

logger = logging.getLogger(__name__)

# quantisation grid applied to rescaled shares so that near-ties are decided
# by index rather than by float noise; keeps the projection scale invariant
_SHARE_DECIMALS = 9


class CategoryTable:
    """All 4-vectors of non-negative integers summing to ``total``.

    Categories are ordered by their ``"acpo"`` digit string, ascending, so for
    three plugs index 0 is ``"0003"`` and index 19 is ``"3000"``.
    """

    def __init__(self, total: int = DEFAULT_PLUGS):
        if total < 0:
            raise ValueError("total must be non-negative")
        self.total = total
        vecs = [v for v in itertools.product(range(total + 1), repeat=4) if sum(v) == total]
        self.vectors = tuple(PlugStateVector(*v) for v in sorted(vecs))
        self._index = {v: i for i, v in enumerate(self.vectors)}
        self.array = np.array(self.vectors, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def strings(self) -> tuple[str, ...]:
        return tuple(_to_string(v) for v in self.vectors)

    def index_of(self, v) -> int:
        key = tuple(int(x) for x in v)
        try:
            return self._index[key]
        except KeyError:
            raise ValueError(f"{key} is not a valid state for {self.total} plugs") from None

    def indices_of(self, arr: np.ndarray) -> np.ndarray:
        """Vectorised index lookup for an (n, 4) integer array."""
        arr = np.asarray(arr, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError("expected an (n, 4) array")
        if (arr < 0).any() or (arr.sum(axis=1) != self.total).any():
            raise ValueError(f"rows must be non-negative and sum to {self.total}")
        base = self.total + 1
        keys = ((arr[:, 0] * base + arr[:, 1]) * base + arr[:, 2]) * base + arr[:, 3]
        table = self.array
        table_keys = ((table[:, 0] * base + table[:, 1]) * base + table[:, 2]) * base + table[:, 3]
        return np.searchsorted(table_keys, keys)


def _to_string(v) -> str:
    if any(x > 9 for x in v):
        raise ValueError("string codes are only defined for at most 9 plugs")
    return "".join(str(int(x)) for x in v)


@lru_cache(maxsize=None)
def category_table(total: int = DEFAULT_PLUGS) -> CategoryTable:
    return CategoryTable(total)


def encode_state(v, total: int = DEFAULT_PLUGS) -> tuple[str, int]:
    """Return the digit string and category index of a plug-state vector."""
    v = tuple(v)
    if len(v) != 4 or any(int(x) != x or x < 0 for x in v):
        raise ValueError(f"{v} is not a vector of four non-negative integers")
    if sum(v) != total:
        raise ValueError(f"state {v} sums to {sum(v)}, expected {total}")
    idx = category_table(total).index_of(v)
    return _to_string(v), idx


def decode_state(code: str | int, total: int = DEFAULT_PLUGS) -> PlugStateVector:
    table = category_table(total)
    if isinstance(code, (int, np.integer)) and not isinstance(code, bool):
        if not 0 <= code < len(table):
            raise ValueError(f"unknown category index {code}")
        return table.vectors[int(code)]
    if isinstance(code, str) and len(code) == 4 and code.isdigit():
        v = tuple(int(c) for c in code)
        if sum(v) == total:
            return table.vectors[table.index_of(v)]
    raise ValueError(f"unknown category code {code!r}")


def round_rescale_many(p: np.ndarray, total: int = DEFAULT_PLUGS) -> np.ndarray:
    """Row-wise projection of non-negative reals onto integers summing to ``total``.

    Each row is rescaled to sum to ``total`` (uniform shares when the row is all
    zero), floored, and the remaining units go to the largest fractional parts
    with ties broken towards the lowest index.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("expected a 2-d array")
    if not np.isfinite(p).all():
        raise ValueError("round_rescale input must be finite")
    if (p < 0).any():
        raise ValueError("round_rescale input must be non-negative")
    s = p.sum(axis=1, keepdims=True)
    zero = s[:, 0] <= 0
    if zero.any():
        logger.debug("round_rescale: %d all-zero rows mapped to uniform shares", int(zero.sum()))
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(zero[:, None], total / p.shape[1], p / np.where(zero[:, None], 1.0, s) * total)
    q = np.round(q, _SHARE_DECIMALS)
    base = np.floor(q)
    frac = np.round(q - base, _SHARE_DECIMALS)
    left = (total - base.sum(axis=1)).astype(np.int64)
    order = np.argsort(-frac, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(p.shape[1])[None, :].repeat(len(p), axis=0), axis=1)
    out = base.astype(np.int64) + (rank < left[:, None])
    return out


def round_rescale(p, total: int = DEFAULT_PLUGS) -> np.ndarray:
    return round_rescale_many(np.asarray(p, dtype=np.float64)[None, :], total)[0]


def integerize(fp: ForecastPanel, hierarchy: Hierarchy, plugs: int = DEFAULT_PLUGS, recompute_aggregates: bool = True) -> ForecastPanel:
    """Project station forecasts onto valid plug states.

    Negative station values are clipped to zero first. With
    ``recompute_aggregates`` the area and global nodes are rebuilt from the
    integer station values, giving a coherent panel; otherwise they are kept.
    """
    stations = fp.select_nodes(hierarchy.station_ids).values
    if not np.isfinite(stations).all():
        raise ValueError("station forecasts must be finite before integerisation")
    neg = stations < 0
    if neg.any():
        logger.info("clipping %d negative station forecasts to zero", int(neg.sum()))
    flat = np.clip(stations, 0.0, None).reshape(-1, 4)
    ints = round_rescale_many(flat, plugs).reshape(stations.shape).astype(np.float64)
    if recompute_aggregates:
        return ForecastPanel(fp.times, hierarchy.nodes, bottom_up(ints, hierarchy))
    full = fp.reorder(hierarchy).values.copy()
    full[:, hierarchy.level_slice("station")] = ints
    return ForecastPanel(fp.times, hierarchy.nodes, full)
