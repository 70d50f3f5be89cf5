"""Exact-greedy gradient-boosted trees with per-sample weights."""
from .boosting import (
    BoostConfig,
    BoostedModel,
    Tree,
    TreeNode,
    fit_classifier,
    fit_regressor,
    fit_tree,
    predict,
)

__all__ = ["BoostConfig", "BoostedModel", "Tree", "TreeNode", "fit_classifier", "fit_regressor", "fit_tree", "predict"]
