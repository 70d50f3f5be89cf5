"""Stacking forecasters that cover different parts of the hierarchy."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from ..core import ForecastPanel, Hierarchy, Panel, bottom_up
from .base import BUNDLE_SCHEMA, MANIFEST, Forecaster, dump_json, register
from .boosted import ChainForecaster, StationClassifier


def complete_bottom_up(fp: ForecastPanel, hierarchy: Hierarchy) -> ForecastPanel:
    """Fill in absent area / global nodes by summing the station forecasts."""
    if all(n in fp.nodes for n in hierarchy.nodes):
        return fp
    if not all(s in fp.nodes for s in hierarchy.station_ids):
        return fp
    full = ForecastPanel(fp.times, hierarchy.nodes, bottom_up(fp.select_nodes(hierarchy.station_ids).values, hierarchy))
    # nodes forecast directly keep their own values
    return full.overlay(fp.select_nodes([n for n in fp.nodes if n not in hierarchy.station_ids])).reorder(hierarchy)


@register
class CompositeForecaster(Forecaster):
    """Parts are fitted on the same panel; where their nodes overlap, later parts win.

    Station-only parts have their area and global nodes filled bottom-up
    before the overlay, so a later part that models an upper level directly
    replaces the summed values there.
    """

    kind = "composite"

    def __init__(self, parts=()):
        super().__init__()
        self.parts: list[Forecaster] = list(parts)
        if not self.parts:
            raise ValueError("a composite needs at least one part")

    @property
    def supports_weights(self) -> bool:  # type: ignore[override]
        return all(p.supports_weights for p in self.parts)

    @property
    def config(self) -> dict:
        return {"parts": [p.kind for p in self.parts]}

    @property
    def n_models(self) -> int:
        return sum(p.n_models for p in self.parts)

    def _fit(self, panel: Panel, weights, jobs) -> None:
        for p in self.parts:
            p.fit(panel, weights if p.supports_weights else None, jobs)
        self.nodes = self._merge(panel.times[:0]).nodes

    def _merge(self, times) -> ForecastPanel:
        out = None
        for p in self.parts:
            fp = complete_bottom_up(p.forecast(times), self.hierarchy)
            out = fp if out is None else out.overlay(fp)
        return out.reorder(self.hierarchy) if all(n in out.nodes for n in self.hierarchy.nodes) else out

    def _forecast(self, times: pd.DatetimeIndex) -> np.ndarray:
        return self._merge(times).select_nodes(self.nodes).values

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        names = []
        for i, p in enumerate(self.parts):
            name = f"part{i:02d}_{p.kind}"
            p.save(path / name)
            names.append(name)
        dump_json(
            {
                "schema": BUNDLE_SCHEMA,
                "kind": self.kind,
                "config": self.config,
                "nodes": list(self.nodes),
                "hierarchy": self.hierarchy.to_dict(),
                "train_end": self.train_end,
                "origin": self.origin,
                "parts": names,
            },
            path / MANIFEST,
        )

    @classmethod
    def _from_manifest(cls, path: Path, d: dict) -> "CompositeForecaster":
        obj = cls([Forecaster.load(path / name) for name in d["parts"]])
        obj.hierarchy = Hierarchy.from_dict(d["hierarchy"])
        obj.nodes = tuple(d["nodes"])
        obj.train_end = pd.Timestamp(d["train_end"])
        obj.origin = pd.Timestamp(d["origin"])
        return obj


def chain_layout(classifier_rounds: int = 300, chain_rounds: int = 100, **kw) -> CompositeForecaster:
    """Station classifier plus one chain per area and a global chain."""
    return CompositeForecaster(
        [
            StationClassifier(rounds=classifier_rounds, **kw),
            ChainForecaster("area", rounds=chain_rounds, **kw),
            ChainForecaster("global", rounds=chain_rounds, **kw),
        ]
    )
