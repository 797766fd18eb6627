"""Binary decision tree with Gini / information-gain splitting.

Feature importance is the total criterion reduction contributed by each
feature (weighted by node size), normalized to sum to one when any split
exists. Tie-breaking is deterministic: the lowest feature index, then the
lowest threshold, wins.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def _impurity_curves(pos_left: np.ndarray, n_left: np.ndarray, n_pos: float,
                     n: int, criterion: str) -> tuple[np.ndarray, np.ndarray]:
    """Left/right impurities for every candidate prefix split."""
    n_right = n - n_left
    pos_right = n_pos - pos_left
    pl = pos_left / n_left
    pr = pos_right / n_right
    if criterion == "gini":
        return 2 * pl * (1 - pl), 2 * pr * (1 - pr)
    # entropy, with 0*log(0) := 0
    def ent(p: np.ndarray) -> np.ndarray:
        out = np.zeros_like(p)
        mask = (p > 0) & (p < 1)
        pm = p[mask]
        out[mask] = -(pm * np.log2(pm) + (1 - pm) * np.log2(1 - pm))
        return out
    return ent(pl), ent(pr)


def _node_impurity(n_pos: float, n: int, criterion: str) -> float:
    p = n_pos / n
    if criterion == "gini":
        return 2 * p * (1 - p)
    if p in (0.0, 1.0):
        return 0.0
    return float(-(p * np.log2(p) + (1 - p) * np.log2(1 - p)))


class DecisionTree:
    """CART-style exact-split binary classifier."""

    def __init__(self, criterion: str = "entropy", max_depth: int | None = None,
                 min_samples_split: int = 2):
        if criterion not in ("gini", "entropy"):
            raise ConfigError(f"criterion must be gini or entropy, got {criterion!r}")
        self.criterion = criterion
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.feature_importances_: np.ndarray | None = None
        self._nodes: list[tuple] = []  # (feature, threshold, left, right) or (-1, proba, -1, -1)
        self.n_features_: int = 0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.n_features_ = X.shape[1]
        self._nodes = []
        importances = np.zeros(self.n_features_)
        self._grow(X, y, np.arange(len(y)), 0, importances, len(y))
        total = importances.sum()
        self.feature_importances_ = importances / total if total > 0 else importances
        return self

    def _grow(self, X, y, rows, depth, importances, n_total) -> int:
        node_id = len(self._nodes)
        self._nodes.append(None)  # reserve
        n = len(rows)
        n_pos = float(y[rows].sum())
        proba = n_pos / n
        stop = (
            n < self.min_samples_split
            or proba in (0.0, 1.0)
            or (self.max_depth is not None and depth >= self.max_depth)
        )
        best = None
        if not stop:
            best = self._best_split(X, y, rows, n_pos)
        if best is None:
            self._nodes[node_id] = (-1, proba, -1, -1)
            return node_id

        feature, threshold, decrease = best
        importances[feature] += (n / n_total) * decrease
        mask = X[rows, feature] <= threshold
        left = self._grow(X, y, rows[mask], depth + 1, importances, n_total)
        right = self._grow(X, y, rows[~mask], depth + 1, importances, n_total)
        self._nodes[node_id] = (feature, threshold, left, right)
        return node_id

    def _best_split(self, X, y, rows, n_pos):
        n = len(rows)
        parent = _node_impurity(n_pos, n, self.criterion)
        best_dec = 0.0
        best = None
        for f in range(self.n_features_):
            col = X[rows, f]
            order = np.argsort(col, kind="stable")
            v = col[order]
            if v[0] == v[-1]:
                continue
            ys = y[rows[order]]
            pos_prefix = np.cumsum(ys)[:-1]
            n_left = np.arange(1, n)
            valid = v[:-1] < v[1:]
            if not valid.any():
                continue
            imp_l, imp_r = _impurity_curves(pos_prefix, n_left, n_pos, n, self.criterion)
            dec = parent - (n_left * imp_l + (n - n_left) * imp_r) / n
            dec[~valid] = -np.inf
            i = int(np.argmax(dec))
            # strict > keeps the lowest feature index / threshold on ties
            if dec[i] > best_dec + 1e-15:
                best_dec = float(dec[i])
                best = (f, (v[i] + v[i + 1]) / 2.0, best_dec)
        return best

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X))
        for i, x in enumerate(X):
            node = self._nodes[0]
            while node[0] != -1:
                node = self._nodes[node[2] if x[node[0]] <= node[1] else node[3]]
            out[i] = node[1]
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)
