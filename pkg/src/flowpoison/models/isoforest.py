"""Isolation Forest anomaly scorer.

Scores follow the standard path-length construction: s(x) = 2^(-E[h(x)]/c(n)),
so higher means more anomalous and values stay in (0, 1].
"""

from __future__ import annotations

import math

import numpy as np

_EULER_GAMMA = 0.5772156649015329


def _avg_path_length(n: int | np.ndarray) -> np.ndarray:
    """Expected path length of an unsuccessful BST search over n points."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n > 2
    out[big] = 2.0 * (np.log(n[big] - 1.0) + _EULER_GAMMA) - 2.0 * (n[big] - 1.0) / n[big]
    out[n == 2] = 1.0
    return out


class _IsoTree:
    __slots__ = ("feature", "threshold", "left", "right", "depth", "size")

    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.depth: list[int] = []
        self.size: list[int] = []

    def build(self, X: np.ndarray, rows: np.ndarray, depth: int, limit: int,
              rng: np.random.Generator) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.depth.append(depth)
        self.size.append(len(rows))
        if depth >= limit or len(rows) <= 1:
            return node
        lo = X[rows].min(axis=0)
        hi = X[rows].max(axis=0)
        usable = np.nonzero(hi > lo)[0]
        if len(usable) == 0:
            return node
        f = int(rng.choice(usable))
        thr = float(rng.uniform(lo[f], hi[f]))
        mask = X[rows, f] < thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self.build(X, rows[mask], depth + 1, limit, rng)
        self.right[node] = self.build(X, rows[~mask], depth + 1, limit, rng)
        return node

    def finalize(self) -> None:
        self.feature = np.asarray(self.feature, dtype=np.int32)  # type: ignore
        self.threshold = np.asarray(self.threshold)  # type: ignore
        self.left = np.asarray(self.left, dtype=np.int32)  # type: ignore
        self.right = np.asarray(self.right, dtype=np.int32)  # type: ignore
        self.depth = np.asarray(self.depth, dtype=np.float64)  # type: ignore
        self.size = np.asarray(self.size, dtype=np.int64)  # type: ignore

    def path_length(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            idx = np.nonzero(internal)[0]
            f = feat[idx]
            go_left = X[idx, f] < self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.depth[node] + _avg_path_length(self.size[node])


class IsolationForest:
    kind = "isoforest"

    def __init__(self, n_trees: int = 100, subsample: int = 256, seed: int = 0):
        self.n_trees = n_trees
        self.subsample = subsample
        self.seed = seed
        self._trees: list[_IsoTree] = []
        self._psi = 0

    def fit(self, X: np.ndarray) -> "IsolationForest":
        X = np.asarray(X, dtype=np.float64)
        n = len(X)
        psi = min(self.subsample, n)
        self._psi = psi
        limit = math.ceil(math.log2(max(psi, 2)))
        root = np.random.default_rng(self.seed)
        self._trees = []
        for _ in range(self.n_trees):
            rng = np.random.default_rng(root.integers(0, 2**63))
            rows = rng.choice(n, size=psi, replace=False)
            tree = _IsoTree()
            tree.build(X, rows, 0, limit, rng)
            tree.finalize()
            self._trees.append(tree)
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        """Anomaly score per point; higher is more anomalous."""
        X = np.asarray(X, dtype=np.float64)
        depths = np.zeros(len(X))
        for tree in self._trees:
            depths += tree.path_length(X)
        mean_depth = depths / len(self._trees)
        c = float(_avg_path_length(np.asarray([self._psi]))[0])
        if c <= 0:
            c = 1.0
        return np.power(2.0, -mean_depth / c)
