"""Feature-importance estimation for trigger design.

Two families of strategies:

* query-free — fit a proxy decision tree on the adversary's data and
  read off criterion-reduction importances (``entropy`` / ``gini``), or
  draw features uniformly at random (``random``). These never touch the
  victim model.
* query-based — ``shap``: permutation-sampled Shapley value estimates of
  the victim model's class probability, marginalized over a background
  sample, summed per feature (absolute values) over the points of the
  class the attack wants misclassified.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from math import factorial
from typing import Callable

import numpy as np

from .errors import ConfigError
from .models.tree import DecisionTree

logger = logging.getLogger(__name__)

QueryFn = Callable[[np.ndarray], np.ndarray]

STRATEGIES = ("entropy", "gini", "shap", "random")


@dataclass(slots=True)
class ImportanceScores:
    """Per-feature importance, oriented toward the non-target class."""

    strategy: str
    scores: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("importance scores must be finite")


def importance_proxy_tree(
    X: np.ndarray, y: np.ndarray, criterion: str = "entropy"
) -> ImportanceScores:
    """Query-free importance from a decision tree fit on local data."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        logger.warning("single-class adversary data: all importances zero")
        return ImportanceScores(criterion, np.zeros(X.shape[1]))
    tree = DecisionTree(criterion=criterion).fit(X, y)
    return ImportanceScores(criterion, tree.feature_importances_.copy())


def importance_random(n_features: int, seed: int) -> ImportanceScores:
    """Seeded random scores; the top-k of these is a uniform k-subset."""
    rng = np.random.default_rng(seed)
    return ImportanceScores("random", rng.random(n_features))


def shapley_sampled_attributions(
    query: QueryFn,
    X: np.ndarray,
    background: np.ndarray,
    n_permutations: int,
    seed: int = 0,
) -> np.ndarray:
    """Permutation-sampling Shapley estimates, one row per point of X.

    For each sampled permutation a background row is drawn and features
    are switched from the background value to the point's value in
    permutation order; successive prediction differences are credited to
    the switched feature. The per-permutation credits telescope, so the
    estimate satisfies the efficiency axiom up to background sampling.
    """
    if n_permutations < 1:
        raise ConfigError(f"n_permutations must be >= 1, got {n_permutations}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    n, d = X.shape
    rng = np.random.default_rng(seed)
    phi = np.zeros((n, d))
    for i in range(n):
        x = X[i]
        acc = np.zeros(d)
        for _ in range(n_permutations):
            perm = rng.permutation(d)
            base = background[rng.integers(len(background))].copy()
            # evaluate the d+1 prefixes of the permutation path in one batch
            path = np.empty((d + 1, d))
            path[0] = base
            cur = base.copy()
            for step, f in enumerate(perm, start=1):
                cur[f] = x[f]
                path[step] = cur
            preds = np.asarray(query(path), dtype=np.float64)
            acc[perm] += np.diff(preds)
        phi[i] = acc / n_permutations
    return phi


def importance_shapley_sampled(
    query: QueryFn,
    X: np.ndarray,
    background: np.ndarray,
    n_permutations: int = 200,
    seed: int = 0,
) -> ImportanceScores:
    """SHAP-style global importance: absolute per-point attributions
    summed per feature over the supplied points."""
    phi = shapley_sampled_attributions(query, X, background, n_permutations, seed)
    return ImportanceScores("shap", np.abs(phi).sum(axis=0))


def shapley_exact_oracle(
    query: QueryFn,
    x: np.ndarray,
    background: np.ndarray,
    max_dim: int = 12,
) -> np.ndarray:
    """Exact Shapley values by full coalition enumeration (test oracle).

    The value of a coalition S is the mean prediction over the background
    sample with the features in S overlaid from x. Refuses dimensions
    above ``max_dim`` (2^d blow-up).
    """
    x = np.asarray(x, dtype=np.float64)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    d = len(x)
    if d > max_dim:
        raise ConfigError(f"exact Shapley enumeration refused for d={d} > {max_dim}")

    values: dict[frozenset, float] = {}
    all_features = tuple(range(d))
    for size in range(d + 1):
        for subset in combinations(all_features, size):
            rows = background.copy()
            rows[:, list(subset)] = x[list(subset)]
            values[frozenset(subset)] = float(np.mean(query(rows)))

    phi = np.zeros(d)
    fact = [factorial(k) for k in range(d + 1)]
    for i in range(d):
        others = [f for f in all_features if f != i]
        for size in range(d):
            weight = fact[size] * fact[d - size - 1] / fact[d]
            for subset in combinations(others, size):
                s = frozenset(subset)
                phi[i] += weight * (values[s | {i}] - values[s])
    return phi


def select_top_k(scores: ImportanceScores, k: int = 8) -> list[int]:
    """Indices of the k highest scores; ties break to the lower index."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    order = np.lexsort((np.arange(len(scores.scores)), -scores.scores))
    return [int(i) for i in order[:k]]


class QueryCounter:
    """Wraps a query function and counts invocations (used to assert the
    query-free guarantee in tests and to report query budgets)."""

    def __init__(self, query: QueryFn):
        self._query = query
        self.calls = 0
        self.rows = 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        self.calls += 1
        self.rows += len(np.atleast_2d(X))
        return self._query(X)
