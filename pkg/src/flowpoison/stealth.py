"""Attack conspicuousness metrics.

Feature space: an Isolation Forest trained on a clean 10% slice of the
training features scores every remaining point; poisoned-point detection
quality is summarized as the area under the precision-recall curve
(threshold-free) and as F1 at the threshold that flags exactly the true
poison fraction — the strongest reasonable defender, which makes the
reported F1 a conservative stealth bound.

Problem space: per-field Jensen-Shannon distance (base-2 logs, so the
value lives in [0, 1]) between poisoned and clean record sets, averaged
across fields, with the train/test drift of the target class reported as
the reference distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .flowlog import ConnRecord
from .models.isoforest import IsolationForest

logger = logging.getLogger(__name__)

JS_FIELDS = (
    "proto", "service", "conn_state", "orig_p", "resp_p",
    "orig_pkts", "resp_pkts", "orig_bytes", "resp_bytes", "duration",
)
_CATEGORICAL_JS = frozenset(("proto", "service", "conn_state"))
_N_NUMERIC_BINS = 50


@dataclass(slots=True)
class StealthReport:
    pr_auc: float | None
    f1_at_threshold: float | None
    js_per_field: dict[str, float] = field(default_factory=dict)
    js_average: float | None = None
    d_ref: float | None = None


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall curve (average precision), with
    ties handled by grouping equal scores into one threshold step."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    n_pos = int(y.sum())
    if n_pos == 0:
        return float("nan")
    tp = np.cumsum(y)
    k = np.arange(1, len(y) + 1)
    # last index of each tied-score group
    boundary = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    precision = tp[boundary] / k[boundary]
    recall = tp[boundary] / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * precision))


def f1_at_fraction(scores: np.ndarray, labels: np.ndarray, fraction: float) -> float:
    """F1 when the defender flags the top-``fraction`` scores."""
    n = len(scores)
    k = int(round(fraction * n))
    if k == 0:
        return 0.0
    order = np.lexsort((np.arange(n), -scores))
    flagged = np.zeros(n, dtype=bool)
    flagged[order[:k]] = True
    tp = int((flagged & (labels == 1)).sum())
    n_pos = int((labels == 1).sum())
    precision = tp / k
    recall = tp / n_pos if n_pos else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate_anomaly_detection(
    X_train: np.ndarray,
    poisoned_indices: Sequence[int],
    seed: int,
    detector_fraction: float = 0.1,
    n_trees: int = 100,
    subsample: int = 256,
) -> tuple[float | None, float | None]:
    """Isolation-Forest detectability of the poisoned training points.

    The detector trains on a clean subset (``detector_fraction`` of the
    training set, disjoint from the poisoned points — asserted). All
    remaining points are scored, so positives occur at the true poison
    prevalence, and an uninformative detector's PR AUC sits near that
    prevalence. Returns (pr_auc, f1); (None, None) for an empty manifest.
    """
    poisoned = sorted(set(int(i) for i in poisoned_indices))
    if not poisoned:
        return None, None
    n = len(X_train)
    pois_mask = np.zeros(n, dtype=bool)
    pois_mask[poisoned] = True

    clean_idx = np.nonzero(~pois_mask)[0]
    rng = np.random.default_rng(seed)
    n_det = int(round(detector_fraction * n))
    n_det = min(n_det, len(clean_idx))
    det_idx = np.sort(rng.choice(clean_idx, size=n_det, replace=False))
    assert not pois_mask[det_idx].any(), "detector subset intersects the manifest"

    scored_mask = np.ones(n, dtype=bool)
    scored_mask[det_idx] = False
    scored_idx = np.nonzero(scored_mask)[0]

    forest = IsolationForest(n_trees=n_trees, subsample=subsample, seed=seed)
    forest.fit(X_train[det_idx])
    scores = forest.score(X_train[scored_idx])
    labels = pois_mask[scored_idx].astype(np.int64)

    fraction = labels.sum() / len(labels)
    return (
        average_precision(scores, labels),
        f1_at_fraction(scores, labels, float(fraction)),
    )


# ---------------------------------------------------------------------------
# Jensen-Shannon distance


def _js_from_counts(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon distance between two count vectors (base-2 logs)."""
    p = p / p.sum() if p.sum() > 0 else p
    q = q / q.sum() if q.sum() > 0 else q
    m = 0.5 * (p + q)

    def kl(a: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / m[mask])))

    div = 0.5 * kl(p) + 0.5 * kl(q)
    return float(np.sqrt(max(0.0, min(1.0, div))))


def _numeric_edges(values: np.ndarray, n_bins: int = _N_NUMERIC_BINS) -> np.ndarray:
    """Log-scaled bin edges fit on the clean side; both ends overflow."""
    logs = np.log1p(values)
    lo, hi = (float(logs.min()), float(logs.max())) if len(logs) else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n_bins + 1)[1:-1]


def js_field_distance(
    poisoned_values: list, clean_values: list, categorical: bool
) -> float:
    if categorical:
        cats = sorted(
            {("-" if v is None else str(v)) for v in poisoned_values}
            | {("-" if v is None else str(v)) for v in clean_values}
        )
        index = {c: i for i, c in enumerate(cats)}

        def hist(vals: list) -> np.ndarray:
            h = np.zeros(len(cats))
            for v in vals:
                h[index["-" if v is None else str(v)]] += 1
            return h

        return _js_from_counts(hist(poisoned_values), hist(clean_values))

    clean = np.array([float(v) for v in clean_values if v is not None])
    pois = np.array([float(v) for v in poisoned_values if v is not None])
    if len(clean) == 0 and len(pois) == 0:
        return 0.0
    edges = _numeric_edges(clean if len(clean) else pois)

    def hist(vals: np.ndarray) -> np.ndarray:
        codes = np.searchsorted(edges, np.log1p(vals), side="right")
        return np.bincount(codes, minlength=len(edges) + 1).astype(float)

    return _js_from_counts(hist(pois), hist(clean))


def jensen_shannon_report(
    poisoned_records: Sequence[ConnRecord],
    clean_records: Sequence[ConnRecord],
    fields: Sequence[str] = JS_FIELDS,
    reference: tuple[Sequence[ConnRecord], Sequence[ConnRecord]] | None = None,
) -> StealthReport:
    """Per-field and average JS distance between record populations.

    ``reference`` optionally supplies (train-benign, test-benign) record
    sets whose average distance is reported as the drift baseline.
    """
    if not poisoned_records or not clean_records:
        raise ValueError("both record sets must be non-empty")
    per_field: dict[str, float] = {}
    for fld in fields:
        per_field[fld] = js_field_distance(
            [getattr(r, fld) for r in poisoned_records],
            [getattr(r, fld) for r in clean_records],
            categorical=fld in _CATEGORICAL_JS,
        )
    avg = float(np.mean(list(per_field.values())))
    d_ref = None
    if reference is not None:
        ref = jensen_shannon_report(reference[0], reference[1], fields)
        d_ref = ref.js_average
    return StealthReport(
        pr_auc=None, f1_at_threshold=None,
        js_per_field=per_field, js_average=avg, d_ref=d_ref,
    )
