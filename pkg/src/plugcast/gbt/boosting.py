"""Gradient boosting for squared-error regression and softmax classification."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class BoostConfig:
    rounds: int = 100
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    l2_leaf: float = 1.0
    n_classes: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")
        if self.l2_leaf < 0:
            raise ValueError("l2_leaf must be non-negative")
        if self.n_classes < 1:
            raise ValueError("n_classes must be at least 1")


@dataclass(frozen=True)
class TreeNode:
    """Nested view of a fitted tree; leaves carry ``value``, splits the rest."""

    value: float | None = None
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth, self.right.depth)


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def root(self, k: int = 0) -> TreeNode:
        if self.feature[k] < 0:
            return TreeNode(value=float(self.value[k]))
        return TreeNode(
            feature=int(self.feature[k]),
            threshold=float(self.threshold[k]),
            left=self.root(int(self.left[k])),
            right=self.root(int(self.right[k])),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _kernels.leaf_index(_as_matrix(X), self.feature, self.threshold, self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-d")
    return X


def sort_order(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature stable sort order and the sorted values, both (features, rows)."""
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    return order, np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))


def _grow(X, presorted, g, h, w, cfg: BoostConfig):
    order, sorted_x = presorted
    feat, thr, left, right, value, leaves = _kernels.grow_tree(
        X, order, sorted_x, g * w, h * w, cfg.max_depth, cfg.min_samples_leaf, float(cfg.l2_leaf)
    )
    return Tree(feat, thr, left, right, value), leaves


def _check_weights(w, n) -> np.ndarray:
    w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},)")
    if not np.isfinite(w).all() or (w < 0).any() or w.sum() <= 0:
        raise ValueError("weights must be finite, non-negative and have a positive sum")
    return w


def fit_tree(X, gradients, hessians, weights=None, cfg: BoostConfig | None = None) -> Tree:
    """Exact greedy CART on second-order statistics.

    Splits maximise ``GL^2/(HL+l2) + GR^2/(HR+l2) - G^2/(H+l2)`` over midpoints
    between consecutive distinct feature values; leaves hold ``-G/(H+l2)``.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    cfg = cfg or BoostConfig()
    X = _as_matrix(X)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a tree on empty input")
    g = np.asarray(gradients, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    if g.shape != (X.shape[0],) or h.shape != (X.shape[0],):
        raise ValueError("gradients and hessians must have one entry per row")
    w = _check_weights(weights, X.shape[0])
    tree, _ = _grow(X, sort_order(X), g, h, w, cfg)
    return tree


def _stack(trees: list[list[Tree]], max_nodes: int):
    m, k = len(trees), len(trees[0]) if trees else 0
    feature = np.full((m, k, max_nodes), -1, dtype=np.int64)
    threshold = np.zeros((m, k, max_nodes))
    left = np.full((m, k, max_nodes), -1, dtype=np.int64)
    right = np.full((m, k, max_nodes), -1, dtype=np.int64)
    value = np.zeros((m, k, max_nodes))
    for t, row in enumerate(trees):
        for c, tree in enumerate(row):
            n = tree.n_nodes
            feature[t, c, :n] = tree.feature
            threshold[t, c, :n] = tree.threshold
            left[t, c, :n] = tree.left
            right[t, c, :n] = tree.right
            value[t, c, :n] = tree.value
    return feature, threshold, left, right, value


@dataclass
class BoostedModel:
    """Additive tree ensemble; ``trees[m][k]`` is round ``m``'s tree for output ``k``."""

    config: BoostConfig
    n_features: int
    base_score: np.ndarray
    trees: list[list[Tree]]
    train_loss: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.base_score = np.asarray(self.base_score, dtype=np.float64)
        self._packed = None

    @property
    def is_classifier(self) -> bool:
        return self.config.n_classes > 1

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def _arrays(self):
        if self._packed is None:
            max_nodes = max((t.n_nodes for row in self.trees for t in row), default=1)
            self._packed = _stack(self.trees, max_nodes)
        return self._packed

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X) if np.size(X) else np.zeros((0, self.n_features))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if not self.trees:
            return np.tile(self.base_score, (X.shape[0], 1))
        return _kernels.ensemble_sum(X, self.base_score, float(self.config.learning_rate), *self._arrays())

    def rollout(self, lags, exog) -> np.ndarray:
        """Recursive multi-step regression forecast.

        Row ``h`` is ``[y_{h-1}, ..., y_{h-L}, exog[h]]`` where the lags come
        from ``lags`` (most recent first) and then from earlier predictions.
        """
        if self.is_classifier:
            raise TypeError("rollout is only defined for regressors")
        lags = np.ascontiguousarray(lags, dtype=np.float64)
        exog = np.ascontiguousarray(exog, dtype=np.float64).reshape(len(exog), -1)
        if lags.shape[0] + exog.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {lags.shape[0] + exog.shape[1]}")
        if not self.trees:
            return np.full(len(exog), self.base_score[0])
        return _kernels.rollout(lags, exog, float(self.base_score[0]), float(self.config.learning_rate), *self._arrays())

    def staged_decision(self, X):
        """Yield the scores after each round, accumulated exactly as in training."""
        X = _as_matrix(X)
        acc = np.tile(self.base_score, (X.shape[0], 1))
        for row in self.trees:
            step = np.column_stack([t.predict(X) for t in row])
            acc = acc + self.config.learning_rate * step
            yield acc

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        if self.is_classifier:
            return np.argmax(scores, axis=1)
        return scores[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        if not self.is_classifier:
            raise TypeError("predict_proba is only defined for classifiers")
        return _softmax(self.decision_function(X))

    def truncated(self, rounds: int) -> "BoostedModel":
        return BoostedModel(self.config, self.n_features, self.base_score, self.trees[:rounds], self.train_loss[: rounds + 1])

    def split_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_features, dtype=np.int64)
        for row in self.trees:
            for t in row:
                f = t.feature[t.feature >= 0]
                np.add.at(counts, f, 1)
        return counts

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_features": self.n_features,
            "base_score": self.base_score.tolist(),
            "train_loss": list(self.train_loss),
            "trees": [
                [
                    {
                        "feature": t.feature.tolist(),
                        "threshold": t.threshold.tolist(),
                        "left": t.left.tolist(),
                        "right": t.right.tolist(),
                        "value": t.value.tolist(),
                    }
                    for t in row
                ]
                for row in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        trees = [
            [
                Tree(
                    np.array(t["feature"], dtype=np.int64),
                    np.array(t["threshold"], dtype=np.float64),
                    np.array(t["left"], dtype=np.int64),
                    np.array(t["right"], dtype=np.int64),
                    np.array(t["value"], dtype=np.float64),
                )
                for t in row
            ]
            for row in d["trees"]
        ]
        return cls(BoostConfig(**d["config"]), d["n_features"], np.array(d["base_score"]), trees, list(d["train_loss"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    @classmethod
    def load(cls, path) -> "BoostedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_regressor(X, y, weights=None, cfg: BoostConfig | None = None) -> BoostedModel:
    """Squared-error boosting starting from the weighted mean of ``y``."""
    cfg = cfg or BoostConfig()
    if cfg.n_classes != 1:
        raise ValueError("fit_regressor needs n_classes == 1")
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError("y must have one entry per row")
    if X.shape[0] == 0:
        raise ValueError("cannot fit on empty input")
    if np.isnan(y).any():
        raise ValueError("target contains NaN")
    w = _check_weights(weights, X.shape[0])
    order = sort_order(X)
    base = float(np.dot(w, y) / w.sum())
    F = np.full(X.shape[0], base)
    ones = np.ones_like(y)
    loss = [float(np.dot(w, (y - F) ** 2))]
    trees = []
    for _ in range(cfg.rounds):
        tree, leaves = _grow(X, order, F - y, ones, w, cfg)
        F = F + cfg.learning_rate * tree.value[leaves]
        trees.append([tree])
        loss.append(float(np.dot(w, (y - F) ** 2)))
    return BoostedModel(cfg, X.shape[1], np.array([base]), trees, loss)


def _log_loss(P: np.ndarray, labels: np.ndarray, w: np.ndarray) -> float:
    p = np.clip(P[np.arange(len(labels)), labels], 1e-300, None)
    return float(-np.dot(w, np.log(p)))


def fit_classifier(X, labels, weights=None, cfg: BoostConfig | None = None) -> BoostedModel:
    """K-way softmax boosting with one tree per class and round."""
    cfg = cfg or BoostConfig(n_classes=2)
    K = cfg.n_classes
    if K < 2:
        raise ValueError("fit_classifier needs n_classes >= 2")
    X = _as_matrix(X)
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise ValueError("labels must have one entry per row")
    if X.shape[0] == 0:
        raise ValueError("cannot fit on empty input")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.array_equal(labels, np.round(labels)):
            raise ValueError("labels must be integer category indices")
        labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"labels must lie in 0..{K - 1}")
    w = _check_weights(weights, X.shape[0])
    order = sort_order(X)
    Y = np.zeros((X.shape[0], K))
    Y[np.arange(X.shape[0]), labels] = 1.0
    F = np.zeros((X.shape[0], K))
    P = _softmax(F)
    loss = [_log_loss(P, labels, w)]
    trees = []
    for _ in range(cfg.rounds):
        row = []
        step = np.empty_like(F)
        for k in range(K):
            g = P[:, k] - Y[:, k]
            h = np.maximum(P[:, k] * (1.0 - P[:, k]), 1e-16)
            tree, leaves = _grow(X, order, g, h, w, cfg)
            step[:, k] = tree.value[leaves]
            row.append(tree)
        F = F + cfg.learning_rate * step
        P = _softmax(F)
        trees.append(row)
        loss.append(_log_loss(P, labels, w))
    return BoostedModel(cfg, X.shape[1], np.zeros(K), trees, loss)


def predict(model: BoostedModel, X) -> np.ndarray:
    return model.predict(X)
