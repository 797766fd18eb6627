"""Dense-network plumbing shared by the classifier and the auto-encoder.

Parameters are a flat list of (W, b) pairs with a parallel activation
list ("relu" or "linear" per layer). Losses return analytic gradients in
the same structure so they can be checked against finite differences.
"""

from __future__ import annotations

import numpy as np

Params = list[tuple[np.ndarray, np.ndarray]]


def init_params(sizes: list[int], rng: np.random.Generator) -> Params:
    """He-normal initialization."""
    params: Params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return params


def forward(params: Params, acts: list[str], X: np.ndarray) -> list[np.ndarray]:
    """Return post-activation outputs per layer; index 0 is the input."""
    outs = [X]
    a = X
    for (W, b), act in zip(params, acts):
        z = a @ W + b
        a = np.maximum(z, 0.0) if act == "relu" else z
        outs.append(a)
    return outs


def _backprop(
    params: Params, acts: list[str], outs: list[np.ndarray], delta: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backpropagate ``delta`` (dLoss/dZ of the last layer) through the net."""
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params)  # type: ignore
    for i in range(len(params) - 1, -1, -1):
        a_prev = outs[i]
        grads[i] = (a_prev.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = delta @ params[i][0].T
            if acts[i - 1] == "relu":
                delta = delta * (outs[i] > 0)
    return grads


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss_and_grads(
    params: Params, acts: list[str], X: np.ndarray, y: np.ndarray,
    sample_weight: np.ndarray,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Weighted binary cross-entropy on logits (the final layer must be
    linear with one output)."""
    outs = forward(params, acts, X)
    z = outs[-1][:, 0]
    # softplus(z) - y*z, stable for large |z|
    losses = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    n = len(y)
    loss = float(np.sum(sample_weight * losses) / n)
    delta = (sample_weight * (sigmoid(z) - y) / n)[:, None]
    return loss, _backprop(params, acts, outs, delta)


def mse_loss_and_grads(
    params: Params, acts: list[str], X: np.ndarray, target: np.ndarray
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    outs = forward(params, acts, X)
    diff = outs[-1] - target
    loss = float(np.mean(diff ** 2))
    delta = 2.0 * diff / diff.size
    return loss, _backprop(params, acts, outs, delta)


class Adam:
    """Adaptive moment estimation over a parameter list."""

    def __init__(self, params: Params, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        self.v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]

    def step(self, params: Params, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for i, ((W, b), (dW, db)) in enumerate(zip(params, grads)):
            mW, mb = self.m[i]
            vW, vb = self.v[i]
            mW[:] = b1 * mW + (1 - b1) * dW
            mb[:] = b1 * mb + (1 - b1) * db
            vW[:] = b2 * vW + (1 - b2) * dW ** 2
            vb[:] = b2 * vb + (1 - b2) * db ** 2
            W -= self.lr * (mW / corr1) / (np.sqrt(vW / corr2) + self.eps)
            b -= self.lr * (mb / corr1) / (np.sqrt(vb / corr2) + self.eps)
