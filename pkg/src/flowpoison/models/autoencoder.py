"""Auto-encoder for learned block features."""

from __future__ import annotations

import numpy as np

from . import _nn


class AutoEncoder:
    """Symmetric dense auto-encoder trained to minimize reconstruction
    MSE; ``encode`` provides the bottleneck features consumed by a
    downstream classifier. Hidden layers are rectified, the bottleneck
    and the output are linear."""

    kind = "ae"

    def __init__(
        self,
        bottleneck: int = 32,
        hidden: tuple[int, ...] = (128,),
        epochs: int = 15,
        batch_size: int = 256,
        learning_rate: float = 1e-3,
        seed: int = 0,
    ):
        self.bottleneck = bottleneck
        self.hidden = tuple(hidden)
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.params: _nn.Params = []
        self.acts: list[str] = []
        self.loss_history: list[float] = []
        self._n_enc_layers = len(self.hidden) + 1

    def fit(self, X: np.ndarray) -> "AutoEncoder":
        X = np.asarray(X, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        sizes = [X.shape[1], *self.hidden, self.bottleneck,
                 *reversed(self.hidden), X.shape[1]]
        self.params = _nn.init_params(sizes, rng)
        self.acts = (["relu"] * len(self.hidden) + ["linear"]
                     + ["relu"] * len(self.hidden) + ["linear"])

        opt = _nn.Adam(self.params, lr=self.learning_rate)
        n = len(X)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                loss, grads = _nn.mse_loss_and_grads(
                    self.params, self.acts, X[idx], X[idx]
                )
                opt.step(self.params, grads)
                epoch_loss += loss * len(idx)
            self.loss_history.append(epoch_loss / n)
        return self

    def encode(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        enc_params = self.params[: self._n_enc_layers]
        enc_acts = self.acts[: self._n_enc_layers]
        return _nn.forward(enc_params, enc_acts, X)[-1]

    def reconstruct(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return _nn.forward(self.params, self.acts, X)[-1]

    def reconstruction_mse(self, X: np.ndarray) -> float:
        return float(np.mean((self.reconstruct(X) - X) ** 2))
