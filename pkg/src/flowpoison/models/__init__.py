"""Native learners: decision tree, gradient boosting, feed-forward
network, auto-encoder, and Isolation Forest."""

from .autoencoder import AutoEncoder
from .gbdt import GradientBoostedTrees
from .io import load_model, save_model
from .isoforest import IsolationForest
from .mlp import FeedForwardClassifier
from .tree import DecisionTree

__all__ = [
    "AutoEncoder",
    "DecisionTree",
    "FeedForwardClassifier",
    "GradientBoostedTrees",
    "IsolationForest",
    "load_model",
    "save_model",
]


def make_classifier(kind: str, seed: int = 0, **hyperparams):
    """Instantiate a binary classifier by kind name (gbdt or ffnn)."""
    if kind in ("gbdt", "gb"):
        return GradientBoostedTrees(seed=seed, **hyperparams)
    if kind == "ffnn":
        return FeedForwardClassifier(seed=seed, **hyperparams)
    raise ValueError(f"unknown classifier kind {kind!r}")
