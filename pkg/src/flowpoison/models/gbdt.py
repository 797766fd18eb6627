"""Gradient-boosted regression trees under logistic loss.

Histogram-based split finding: features are quantile-binned once (256
bins), then every node's best split is found from per-bin gradient and
hessian sums. Leaf values take a damped Newton step. Training is exact
greedy and involves no sampling, so results are deterministic for a
given (data, hyperparameters, seed) triple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _nn


@dataclass
class _Tree:
    feature: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))
    threshold: np.ndarray = field(default_factory=lambda: np.zeros(0))
    left: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))
    right: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))
    value: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            idx = np.nonzero(internal)[0]
            f = feat[idx]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.value[node]


class GradientBoostedTrees:
    kind = "gbdt"

    def __init__(
        self,
        n_trees: int = 100,
        max_depth: int = 6,
        learning_rate: float = 0.1,
        reg_lambda: float = 1.0,
        n_bins: int = 256,
        min_child_weight: float = 1e-3,
        min_gain: float = 1e-12,
        class_weight: str | None = "balanced",
        seed: int = 0,
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.n_bins = n_bins
        self.min_child_weight = min_child_weight
        self.min_gain = min_gain
        self.class_weight = class_weight
        self.seed = seed
        self.trees: list[_Tree] = []
        self.base_score = 0.0
        self.feature_names: tuple[str, ...] | None = None
        self.metadata: dict = {}
        self.staged_train_loss: list[float] = []
        self._const_proba: float | None = None

    # -- binning ------------------------------------------------------------

    def _fit_bins(self, X: np.ndarray) -> list[np.ndarray]:
        edges = []
        qs = np.linspace(0, 100, self.n_bins + 1)[1:-1]
        for f in range(X.shape[1]):
            e = np.unique(np.percentile(X[:, f], qs))
            edges.append(e)
        return edges

    @staticmethod
    def _bin_column(col: np.ndarray, e: np.ndarray) -> np.ndarray:
        # code k means col <= e[k] is the tightest bound; code len(e) is the
        # overflow bin. Split "bin <= k" maps to threshold e[k].
        return np.searchsorted(e, col, side="left").astype(np.int32)

    # -- training -----------------------------------------------------------

    def fit(self, X: np.ndarray, y: np.ndarray,
            feature_names: tuple[str, ...] | None = None) -> "GradientBoostedTrees":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.feature_names = feature_names

        classes = np.unique(y)
        if len(classes) < 2:
            self._const_proba = float(np.clip(classes[0], 0.01, 0.99))
            self.metadata["constant"] = True
            return self

        if self.class_weight == "balanced":
            n, n_pos = len(y), y.sum()
            w = np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))
        else:
            w = np.ones(len(y))

        edges = self._fit_bins(X)
        codes = np.empty(X.shape, dtype=np.int32)
        for f in range(X.shape[1]):
            codes[:, f] = self._bin_column(X[:, f], edges[f])

        p0 = float(np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6))
        self.base_score = float(np.log(p0 / (1 - p0)))
        F = np.full(len(y), self.base_score)

        self.trees = []
        self.staged_train_loss = []
        for _ in range(self.n_trees):
            p = _nn.sigmoid(F)
            g = w * (p - y)
            h = w * p * (1 - p)
            tree = self._build_tree(codes, edges, g, h)
            self.trees.append(tree)
            F += self.learning_rate * tree.predict(X)
            self.staged_train_loss.append(self._logistic_loss(F, y, w))
        return self

    @staticmethod
    def _logistic_loss(F: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
        losses = np.maximum(F, 0.0) - y * F + np.log1p(np.exp(-np.abs(F)))
        return float(np.sum(w * losses) / len(y))

    def _build_tree(self, codes, edges, g, h) -> _Tree:
        n, n_feat = codes.shape
        lam = self.reg_lambda
        max_nodes = 2 ** (self.max_depth + 1)
        feature = np.full(max_nodes, -1, dtype=np.int32)
        threshold = np.zeros(max_nodes)
        left = np.zeros(max_nodes, dtype=np.int32)
        right = np.zeros(max_nodes, dtype=np.int32)
        value = np.zeros(max_nodes)

        node_of = np.zeros(n, dtype=np.int64)
        n_nodes = 1
        active = {0: (float(g.sum()), float(h.sum()))}

        for _ in range(self.max_depth):
            if not active:
                break
            ids = sorted(active)
            ids_arr = np.asarray(ids, dtype=np.int64)
            n_slots = len(ids)
            in_active = np.isin(node_of, ids_arr)
            rows = np.nonzero(in_active)[0]
            slot_of = np.searchsorted(ids_arr, node_of[rows])

            # Per-feature histograms over all active nodes in one pass.
            best: dict[int, tuple[float, int, int]] = {}
            for f in range(n_feat):
                nb = len(edges[f]) + 1
                if nb < 2:
                    continue
                comb = slot_of * nb + codes[rows, f]
                G = np.bincount(comb, weights=g[rows], minlength=n_slots * nb)
                H = np.bincount(comb, weights=h[rows], minlength=n_slots * nb)
                G = G.reshape(n_slots, nb)
                H = H.reshape(n_slots, nb)
                GL = np.cumsum(G, axis=1)[:, :-1]
                HL = np.cumsum(H, axis=1)[:, :-1]
                for s, nid in enumerate(ids):
                    Gt, Ht = active[nid]
                    HR = Ht - HL[s]
                    ok = (HL[s] >= self.min_child_weight) & (HR >= self.min_child_weight)
                    if not ok.any():
                        continue
                    gain = (
                        GL[s] ** 2 / (HL[s] + lam)
                        + (Gt - GL[s]) ** 2 / (HR + lam)
                        - Gt ** 2 / (Ht + lam)
                    )
                    gain[~ok] = -np.inf
                    b = int(np.argmax(gain))
                    cur = best.get(nid)
                    if gain[b] > self.min_gain and (cur is None or gain[b] > cur[0]):
                        best[nid] = (float(gain[b]), f, b)

            next_active: dict[int, tuple[float, float]] = {}
            split_map: dict[int, tuple[int, int, int, int]] = {}
            for nid in ids:
                Gt, Ht = active[nid]
                if nid not in best:
                    value[nid] = -Gt / (Ht + lam)
                    continue
                _, f, b = best[nid]
                feature[nid] = f
                threshold[nid] = edges[f][b]
                left[nid] = n_nodes
                right[nid] = n_nodes + 1
                split_map[nid] = (f, b, n_nodes, n_nodes + 1)
                n_nodes += 2

            if split_map:
                order = np.argsort(node_of[rows], kind="stable")
                sorted_rows = rows[order]
                sorted_nids = node_of[sorted_rows]
                for nid, (f, b, lchild, rchild) in split_map.items():
                    lo = np.searchsorted(sorted_nids, nid, side="left")
                    hi = np.searchsorted(sorted_nids, nid, side="right")
                    sel = sorted_rows[lo:hi]
                    go_left = codes[sel, f] <= b
                    node_of[sel[go_left]] = lchild
                    node_of[sel[~go_left]] = rchild
                    gl = float(g[sel[go_left]].sum())
                    hl = float(h[sel[go_left]].sum())
                    Gt, Ht = active[nid]
                    next_active[lchild] = (gl, hl)
                    next_active[rchild] = (Gt - gl, Ht - hl)
            active = next_active

        # surviving actives at max depth become leaves
        for nid, (Gt, Ht) in active.items():
            value[nid] = -Gt / (Ht + lam)

        return _Tree(
            feature=feature[:n_nodes].copy(),
            threshold=threshold[:n_nodes].copy(),
            left=left[:n_nodes].copy(),
            right=right[:n_nodes].copy(),
            value=value[:n_nodes].copy(),
        )

    # -- inference ----------------------------------------------------------

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        F = np.full(len(X), self.base_score)
        for tree in self.trees:
            F += self.learning_rate * tree.predict(X)
        return F

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.feature_names is not None and X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected {len(self.feature_names)} features, got {X.shape[1]}"
            )
        if self._const_proba is not None:
            return np.full(len(X), self._const_proba)
        return _nn.sigmoid(self.decision_function(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)
