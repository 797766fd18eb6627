"""Versioned model persistence (npz container with a JSON meta entry)."""

from __future__ import annotations

import json

import numpy as np

from .autoencoder import AutoEncoder
from .gbdt import GradientBoostedTrees, _Tree
from .mlp import FeedForwardClassifier

FORMAT_VERSION = 1


def save_model(model, path: str) -> None:
    meta: dict = {"format_version": FORMAT_VERSION, "kind": model.kind}
    arrays: dict[str, np.ndarray] = {}
    if isinstance(model, GradientBoostedTrees):
        meta.update(
            n_trees=model.n_trees, max_depth=model.max_depth,
            learning_rate=model.learning_rate, reg_lambda=model.reg_lambda,
            n_bins=model.n_bins, seed=model.seed, base_score=model.base_score,
            feature_names=list(model.feature_names or []) or None,
            metadata=model.metadata, const_proba=model._const_proba,
            n_fitted_trees=len(model.trees),
        )
        for i, t in enumerate(model.trees):
            arrays[f"t{i}_feature"] = t.feature
            arrays[f"t{i}_threshold"] = t.threshold
            arrays[f"t{i}_left"] = t.left
            arrays[f"t{i}_right"] = t.right
            arrays[f"t{i}_value"] = t.value
    elif isinstance(model, FeedForwardClassifier):
        meta.update(
            hidden=list(model.hidden), epochs=model.epochs,
            batch_size=model.batch_size, learning_rate=model.learning_rate,
            seed=model.seed, acts=model.acts,
            feature_names=list(model.feature_names or []) or None,
            metadata=model.metadata, const_proba=model._const_proba,
        )
        if model._mean is not None:
            arrays["mean"] = model._mean
            arrays["std"] = model._std
        for i, (W, b) in enumerate(model.params):
            arrays[f"W{i}"], arrays[f"b{i}"] = W, b
    elif isinstance(model, AutoEncoder):
        meta.update(
            bottleneck=model.bottleneck, hidden=list(model.hidden),
            epochs=model.epochs, batch_size=model.batch_size,
            learning_rate=model.learning_rate, seed=model.seed, acts=model.acts,
            loss_history=model.loss_history,
        )
        for i, (W, b) in enumerate(model.params):
            arrays[f"W{i}"], arrays[f"b{i}"] = W, b
    else:
        raise TypeError(f"cannot persist model of type {type(model).__name__}")
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_model(path: str):
    data = np.load(path)
    meta = json.loads(bytes(data["__meta__"].tobytes()).decode())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format: {meta.get('format_version')}")
    kind = meta["kind"]
    if kind == "gbdt":
        model = GradientBoostedTrees(
            n_trees=meta["n_trees"], max_depth=meta["max_depth"],
            learning_rate=meta["learning_rate"], reg_lambda=meta["reg_lambda"],
            n_bins=meta["n_bins"], seed=meta["seed"],
        )
        model.base_score = meta["base_score"]
        model.metadata = meta["metadata"]
        model._const_proba = meta["const_proba"]
        if meta["feature_names"]:
            model.feature_names = tuple(meta["feature_names"])
        model.trees = [
            _Tree(
                feature=data[f"t{i}_feature"], threshold=data[f"t{i}_threshold"],
                left=data[f"t{i}_left"], right=data[f"t{i}_right"],
                value=data[f"t{i}_value"],
            )
            for i in range(meta["n_fitted_trees"])
        ]
        return model
    if kind == "ffnn":
        model = FeedForwardClassifier(
            hidden=tuple(meta["hidden"]), epochs=meta["epochs"],
            batch_size=meta["batch_size"], learning_rate=meta["learning_rate"],
            seed=meta["seed"],
        )
        model.acts = meta["acts"]
        model.metadata = meta["metadata"]
        model._const_proba = meta["const_proba"]
        if meta["feature_names"]:
            model.feature_names = tuple(meta["feature_names"])
        if "mean" in data:
            model._mean, model._std = data["mean"], data["std"]
        model.params = _load_layers(data, len(meta["acts"]))
        return model
    if kind == "ae":
        model = AutoEncoder(
            bottleneck=meta["bottleneck"], hidden=tuple(meta["hidden"]),
            epochs=meta["epochs"], batch_size=meta["batch_size"],
            learning_rate=meta["learning_rate"], seed=meta["seed"],
        )
        model.acts = meta["acts"]
        model.loss_history = meta["loss_history"]
        model.params = _load_layers(data, len(meta["acts"]))
        return model
    raise ValueError(f"unknown model kind {kind!r}")


def _load_layers(data, n_layers: int):
    return [(data[f"W{i}"], data[f"b{i}"]) for i in range(n_layers)]
