"""Common forecaster interface, model bundles and shared feature plumbing."""
from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, ClassVar, Iterable, Sequence

import numpy as np
import pandas as pd

from ..core import STEP, ForecastPanel, Hierarchy, Panel, aggregate
from ..gbt import BoostedModel
from ..preprocess import featurize

logger = logging.getLogger(__name__)

BUNDLE_SCHEMA = 1
MANIFEST = "manifest.json"
_REGISTRY: dict[str, type["Forecaster"]] = {}


def register(cls):
    _REGISTRY[cls.kind] = cls
    return cls


def forecaster_kinds() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Ordered map; ``jobs > 1`` runs on threads (the tree kernels release the GIL)."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def check_weights(weights, times: pd.DatetimeIndex) -> np.ndarray:
    if weights is None:
        return np.ones(len(times))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(times),):
        raise ValueError(f"expected one weight per training timestamp ({len(times)}), got shape {w.shape}")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("training weights must be finite and non-negative")
    return w


def feature_matrix(times, names: Sequence[str], holidays=None, origin=None) -> np.ndarray:
    frame = featurize(pd.DatetimeIndex(times), holidays, origin)
    unknown = [n for n in names if n not in frame.columns]
    if unknown:
        raise ValueError(f"unknown feature {unknown[0]!r}; choose from {tuple(frame.columns)}")
    return frame[list(names)].to_numpy(dtype=np.float64)


def level_targets(panel: Panel, levels: Iterable[str]) -> tuple[tuple[str, ...], np.ndarray]:
    """Node names and (T, nodes, 4) truth for the requested levels (NaN where unobserved)."""
    h = panel.hierarchy
    full = aggregate(panel, h, strict=False)
    nodes = tuple(n for lv in levels for n in h.level_nodes(lv))
    return nodes, full.values[:, full.node_pos(nodes)]


def future_steps(last: pd.Timestamp, times: pd.DatetimeIndex) -> np.ndarray:
    """1-based step offsets of ``times`` after ``last``; errors on times not after it."""
    times = pd.DatetimeIndex(times)
    if len(times) == 0:
        return np.zeros(0, dtype=np.int64)
    delta = (times - last) / STEP
    steps = np.asarray(np.round(delta), dtype=np.int64)
    if (steps < 1).any():
        raise ValueError(f"forecast time {times[steps < 1][0]} does not follow the training end {last}")
    return steps


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, pd.Timestamp):
        return o.strftime("%Y-%m-%dT%H:%M:%S")
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default) + "\n")


class Forecaster(ABC):
    """Fit on a station panel, forecast a fragment of the node hierarchy.

    ``weights`` given to :meth:`fit` are per training timestamp and act as
    sample weights on every row built from that timestamp.
    """

    kind: ClassVar[str] = ""
    supports_weights: ClassVar[bool] = False

    def __init__(self):
        self.hierarchy: Hierarchy | None = None
        self.nodes: tuple[str, ...] = ()
        self.train_end: pd.Timestamp | None = None
        self.origin: pd.Timestamp | None = None
        self.notes: dict = {}

    @property
    def config(self) -> dict:
        return {}

    @property
    def n_models(self) -> int:
        return len(self._models())

    @property
    def is_fitted(self) -> bool:
        return self.hierarchy is not None

    def fit(self, panel: Panel, weights=None, jobs: int = 1) -> "Forecaster":
        if len(panel.times) == 0:
            raise ValueError("cannot fit on an empty panel")
        if weights is not None and not self.supports_weights:
            raise ValueError(f"{self.kind} does not support training weights")
        w = check_weights(weights, panel.times)
        self.hierarchy = panel.hierarchy
        self.train_end = panel.times[-1]
        self.origin = panel.origin
        self._fit(panel, w, jobs)
        return self

    @abstractmethod
    def _fit(self, panel: Panel, weights: np.ndarray, jobs: int) -> None: ...

    @abstractmethod
    def _forecast(self, times: pd.DatetimeIndex) -> np.ndarray:
        """(T, len(self.nodes), 4) values."""

    def forecast(self, times, nodes: Sequence[str] | None = None) -> ForecastPanel:
        if not self.is_fitted:
            raise RuntimeError("forecaster is not fitted")
        times = pd.DatetimeIndex(times)
        if times.has_duplicates:
            raise ValueError("forecast times contain duplicates")
        values = self._forecast(times)
        fp = ForecastPanel(times, self.nodes, values)
        if not fp.is_finite:
            raise RuntimeError(f"{self.kind} produced non-finite forecasts")
        if nodes is not None:
            unknown = [n for n in nodes if n not in self.nodes]
            if unknown:
                raise KeyError(f"node {unknown[0]!r} was not seen in training")
            fp = fp.select_nodes(tuple(nodes))
        return fp

    # bundle I/O --------------------------------------------------------------

    def _state(self) -> dict:
        return {}

    def _models(self) -> dict[str, BoostedModel]:
        return {}

    def _restore(self, state: dict, models: dict[str, BoostedModel]) -> None:
        pass

    def save(self, path) -> None:
        path = Path(path)
        (path / "models").mkdir(parents=True, exist_ok=True)
        models = self._models()
        manifest = {
            "schema": BUNDLE_SCHEMA,
            "kind": self.kind,
            "config": self.config,
            "nodes": list(self.nodes),
            "hierarchy": self.hierarchy.to_dict(),
            "train_end": self.train_end,
            "origin": self.origin,
            "notes": self.notes,
            "state": self._state(),
            "models": sorted(models),
        }
        dump_json(manifest, path / MANIFEST)
        for name, m in models.items():
            dump_json(m.to_dict(), path / "models" / f"{name}.json")

    @classmethod
    def load(cls, path) -> "Forecaster":
        path = Path(path)
        mf = path / MANIFEST
        if not mf.exists():
            raise FileNotFoundError(f"{path}: not a model bundle (no {MANIFEST})")
        d = json.loads(mf.read_text())
        if d.get("schema") != BUNDLE_SCHEMA:
            raise ValueError(f"{path}: unsupported bundle schema {d.get('schema')!r}")
        kind = d.get("kind")
        if kind not in _REGISTRY:
            raise ValueError(f"{path}: unknown forecaster kind {kind!r}")
        return _REGISTRY[kind]._from_manifest(path, d)

    @classmethod
    def _from_manifest(cls, path: Path, d: dict) -> "Forecaster":
        obj = cls(**d["config"])
        obj.hierarchy = Hierarchy.from_dict(d["hierarchy"])
        obj.nodes = tuple(d["nodes"])
        obj.train_end = pd.Timestamp(d["train_end"])
        obj.origin = pd.Timestamp(d["origin"])
        obj.notes = d.get("notes", {})
        models = {n: BoostedModel.from_dict(json.loads((path / "models" / f"{n}.json").read_text())) for n in d["models"]}
        obj._restore(d["state"], models)
        return obj
