"""Feed-forward binary classifier trained with mini-batch Adam."""

from __future__ import annotations

import numpy as np

from . import _nn


class FeedForwardClassifier:
    """Rectifier MLP with a sigmoid output, class-weighted logistic loss,
    and inputs standardized with training-set statistics.

    Deterministic given (data, hyperparameters, seed). A single-class
    training set produces a constant model with the probability clipped
    to [0.01, 0.99] and ``metadata["constant"]`` set.
    """

    kind = "ffnn"

    def __init__(
        self,
        hidden: tuple[int, ...] = (64, 32),
        epochs: int = 30,
        batch_size: int = 256,
        learning_rate: float = 1e-3,
        class_weight: str | None = "balanced",
        seed: int = 0,
    ):
        self.hidden = tuple(hidden)
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.class_weight = class_weight
        self.seed = seed
        self.params: _nn.Params = []
        self.acts: list[str] = []
        self.feature_names: tuple[str, ...] | None = None
        self.metadata: dict = {}
        self.loss_history: list[float] = []
        self._mean: np.ndarray | None = None
        self._std: np.ndarray | None = None
        self._const_proba: float | None = None

    def _weights_for(self, y: np.ndarray) -> np.ndarray:
        if self.class_weight != "balanced":
            return np.ones(len(y))
        n, n_pos = len(y), int(y.sum())
        w = np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))
        return w

    def fit(self, X: np.ndarray, y: np.ndarray,
            feature_names: tuple[str, ...] | None = None) -> "FeedForwardClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.feature_names = feature_names
        self._mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0.0] = 1.0
        self._std = std

        classes = np.unique(y)
        if len(classes) < 2:
            self._const_proba = float(np.clip(classes[0], 0.01, 0.99))
            self.metadata["constant"] = True
            return self

        Xs = (X - self._mean) / self._std
        rng = np.random.default_rng(self.seed)
        sizes = [X.shape[1], *self.hidden, 1]
        self.params = _nn.init_params(sizes, rng)
        self.acts = ["relu"] * len(self.hidden) + ["linear"]
        w = self._weights_for(y)

        opt = _nn.Adam(self.params, lr=self.learning_rate)
        n = len(y)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                loss, grads = _nn.bce_loss_and_grads(
                    self.params, self.acts, Xs[idx], y[idx], w[idx]
                )
                opt.step(self.params, grads)
                epoch_loss += loss * len(idx)
            self.loss_history.append(epoch_loss / n)
        return self

    def _check_schema(self, X: np.ndarray) -> None:
        if self.feature_names is not None and X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected {len(self.feature_names)} features, got {X.shape[1]}"
            )

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        self._check_schema(X)
        if self._const_proba is not None:
            return np.full(len(X), self._const_proba)
        Xs = (X - self._mean) / self._std
        z = _nn.forward(self.params, self.acts, Xs)[-1][:, 0]
        return _nn.sigmoid(z)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)
