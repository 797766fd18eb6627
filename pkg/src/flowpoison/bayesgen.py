"""Generative trigger synthesis with a fixed-structure Bayesian network.

The network spans the log fields (responder port, protocol, service,
connection state, originator port, packet and byte counts). Categorical
nodes carry conditional probability tables estimated by frequency counts
with add-one smoothing over the observed support of each parent context,
so sampled values never leave the adversary's observed support unless a
declared fallback fires (and is logged). Numeric nodes use Gaussian
kernel density estimates on log1p-transformed values: packet counts
marginally, responder packets conditioned on equal-frequency originator
packet buckets, and bytes derived by summing per-packet draws from a
bytes-per-packet KDE for each direction.

Fields outside the graph are blended empirically: duration and responder
IP resample the adversary's target-class values; timestamps and the
originator IP are assigned at injection time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AttackError, ConfigError
from .featurize import (
    COUNT_SUM_FEATURES,
    FEATURE_INDEX,
    FEATURE_NAMES,
    AggregationKey,
    recompute_point,
)
from .flowlog import LABEL_UNLABELED, ConnRecord
from .trigger import FeatureNormalizer, Trigger, TriggerProto

logger = logging.getLogger(__name__)

CATEGORICAL_NODES = ("proto", "resp_p", "service", "conn_state", "orig_p")

# node -> parents; roots sample from their marginal
DAG_EDGES: dict[str, tuple[str, ...]] = {
    "proto": (),
    "resp_p": (),
    "service": ("resp_p",),
    "conn_state": ("proto", "service"),
    "orig_p": ("resp_p",),
    "orig_pkts": (),
    "resp_pkts": ("orig_pkts",),
    "orig_bytes": ("orig_pkts",),
    "resp_bytes": ("resp_pkts",),
}

N_PKT_BUCKETS = 10


class GaussianKDE:
    """Gaussian kernel density estimate with Silverman bandwidth."""

    def __init__(self, support: np.ndarray, bandwidth: float):
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        self.support = np.asarray(support, dtype=np.float64)
        self.bandwidth = float(bandwidth)

    @classmethod
    def fit(cls, values: Sequence[float], bandwidth: float | None = None) -> "GaussianKDE":
        v = np.asarray(list(values), dtype=np.float64)
        if len(v) == 0:
            raise ValueError("cannot fit a KDE on zero values")
        if bandwidth is None:
            std = float(v.std())
            iqr = float(np.subtract(*np.percentile(v, [75, 25])))
            spread = min(std, iqr / 1.34) if iqr > 0 else std
            bandwidth = 0.9 * spread * len(v) ** (-0.2)
            if bandwidth <= 0:
                bandwidth = 1e-6  # point mass: keep samples at the value
        return cls(v, bandwidth)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, len(self.support), size=n)
        return self.support[idx] + rng.normal(0.0, self.bandwidth, size=n)


class LogCountKDE:
    """KDE over log1p(value) that samples non-negative integers."""

    def __init__(self, kde: GaussianKDE):
        self.kde = kde

    @classmethod
    def fit(cls, values: Sequence[float]) -> "LogCountKDE":
        return cls(GaussianKDE.fit(np.log1p(np.asarray(list(values), dtype=np.float64))))

    def sample_int(self, rng: np.random.Generator) -> int:
        raw = float(np.expm1(self.kde.sample(1, rng)[0]))
        return int(round(max(0.0, raw)))

    def sample_positive(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.maximum(0.0, np.expm1(self.kde.sample(n, rng)))


class CategoricalCPT:
    """Conditional table with add-one smoothing over per-context support."""

    def __init__(self, node: str, parents: tuple[str, ...]):
        self.node = node
        self.parents = parents
        self.tables: dict[tuple, tuple[list, np.ndarray]] = {}
        self.marginal: tuple[list, np.ndarray] | None = None

    @staticmethod
    def _normalize(counts: dict) -> tuple[list, np.ndarray]:
        values = sorted(counts, key=lambda v: (v is None, str(v)))
        raw = np.array([counts[v] + 1.0 for v in values])
        return values, raw / raw.sum()

    def fit(self, rows: list[dict]) -> "CategoricalCPT":
        ctx_counts: dict[tuple, dict] = {}
        marg: dict = {}
        for row in rows:
            ctx = tuple(row[p] for p in self.parents)
            val = row[self.node]
            ctx_counts.setdefault(ctx, {}).setdefault(val, 0)
            ctx_counts[ctx][val] += 1
            marg[val] = marg.get(val, 0) + 1
        self.tables = {ctx: self._normalize(c) for ctx, c in ctx_counts.items()}
        self.marginal = self._normalize(marg)
        return self

    def sample(self, ctx: tuple, rng: np.random.Generator) -> tuple[object, bool]:
        """Returns (value, fallback_fired)."""
        entry = self.tables.get(ctx)
        if entry is None:
            entry = self.marginal
            fallback = len(self.parents) > 0
        else:
            fallback = False
        values, probs = entry
        return values[int(rng.choice(len(values), p=probs))], fallback

    def row_sums_ok(self, tol: float = 1e-9) -> bool:
        return all(abs(p.sum() - 1.0) <= tol for _, p in self.tables.values())


@dataclass
class BayesNet:
    """Fitted generative model over connection-log fields."""

    cpts: dict[str, CategoricalCPT]
    orig_pkts_kde: LogCountKDE
    resp_pkts_buckets: np.ndarray          # orig_pkts bucket edges
    resp_pkts_kdes: list[LogCountKDE]      # one per bucket
    resp_pkts_fallback: LogCountKDE
    orig_bpp_kde: LogCountKDE
    resp_bpp_kde: LogCountKDE
    durations: np.ndarray
    resp_ips: list[str]
    n_records: int
    metadata: dict = field(default_factory=dict)

    def bucket_of(self, orig_pkts: float) -> int:
        return int(np.searchsorted(self.resp_pkts_buckets, orig_pkts, side="right"))


def _record_row(rec: ConnRecord) -> dict:
    return {
        "proto": rec.proto,
        "resp_p": rec.resp_p,
        "service": rec.service,
        "conn_state": rec.conn_state,
        "orig_p": rec.orig_p,
    }


def fit_bayes_net(records: Sequence[ConnRecord]) -> BayesNet:
    """Estimate all conditional distributions from the adversary's
    target-class records."""
    records = [r for r in records]
    if not records:
        raise AttackError("cannot fit the generative model on zero records")
    metadata: dict = {"fallbacks": []}

    rows = [_record_row(r) for r in records]
    cpts = {
        node: CategoricalCPT(node, parents).fit(rows)
        for node, parents in DAG_EDGES.items()
        if node in CATEGORICAL_NODES
    }

    orig_pkts = np.array([r.orig_pkts for r in records], dtype=np.float64)
    resp_pkts = np.array([r.resp_pkts for r in records], dtype=np.float64)
    orig_pkts_kde = LogCountKDE.fit(orig_pkts)
    resp_pkts_fallback = LogCountKDE.fit(resp_pkts)

    # equal-frequency buckets over orig_pkts; exact-value conditioning
    # would be empty for rare packet counts
    qs = np.linspace(0, 100, N_PKT_BUCKETS + 1)[1:-1]
    edges = np.unique(np.percentile(orig_pkts, qs))
    bucket_idx = np.searchsorted(edges, orig_pkts, side="right")
    kdes: list[LogCountKDE] = []
    for b in range(len(edges) + 1):
        sub = resp_pkts[bucket_idx == b]
        if len(sub) == 0:
            metadata["fallbacks"].append(f"resp_pkts bucket {b} empty at fit")
            kdes.append(resp_pkts_fallback)
        else:
            kdes.append(LogCountKDE.fit(sub))

    def bpp(bytes_of, pkts_of) -> LogCountKDE:
        ratios = [
            bytes_of(r) / pkts_of(r)
            for r in records
            if pkts_of(r) > 0 and bytes_of(r) is not None
        ]
        if not ratios:
            metadata["fallbacks"].append("bytes-per-packet support empty at fit")
            ratios = [0.0]
        return LogCountKDE.fit(ratios)

    orig_bpp = bpp(lambda r: r.orig_bytes, lambda r: r.orig_pkts)
    resp_bpp = bpp(lambda r: r.resp_bytes, lambda r: r.resp_pkts)

    durations = np.array(
        [r.duration for r in records if r.duration is not None], dtype=np.float64
    )
    resp_ips = sorted({r.resp_ip for r in records})
    return BayesNet(
        cpts=cpts,
        orig_pkts_kde=orig_pkts_kde,
        resp_pkts_buckets=edges,
        resp_pkts_kdes=kdes,
        resp_pkts_fallback=resp_pkts_fallback,
        orig_bpp_kde=orig_bpp,
        resp_bpp_kde=resp_bpp,
        durations=durations,
        resp_ips=resp_ips,
        n_records=len(records),
        metadata=metadata,
    )


def sample_connection(
    bn: BayesNet,
    fixed: dict[str, object],
    rng: np.random.Generator,
    events: list[str] | None = None,
) -> ConnRecord:
    """Draw one connection, holding the trigger-bearing ``fixed`` fields
    and sampling the rest in topological order.

    A fixed value never observed in the adversary's data triggers the
    unconditional fallback for its children (logged via ``events``); the
    fixed value itself is never altered.
    """
    def note(msg: str) -> None:
        if events is not None:
            events.append(msg)
        logger.debug("sampling fallback: %s", msg)

    def cat(node: str, ctx: tuple) -> object:
        if node in fixed:
            return fixed[node]
        value, fell_back = bn.cpts[node].sample(ctx, rng)
        if fell_back:
            note(f"{node}|{ctx!r} unseen; sampled from marginal")
        return value

    proto = cat("proto", ())
    resp_p = cat("resp_p", ())
    service = cat("service", (resp_p,))
    conn_state = cat("conn_state", (proto, service))
    orig_p = cat("orig_p", (resp_p,))

    orig_pkts = bn.orig_pkts_kde.sample_int(rng)
    resp_pkts = bn.resp_pkts_kdes[bn.bucket_of(orig_pkts)].sample_int(rng)

    orig_bytes = int(round(float(
        bn.orig_bpp_kde.sample_positive(orig_pkts, rng).sum()
    ))) if orig_pkts > 0 else 0
    resp_bytes = int(round(float(
        bn.resp_bpp_kde.sample_positive(resp_pkts, rng).sum()
    ))) if resp_pkts > 0 else 0

    duration = (
        float(bn.durations[rng.integers(len(bn.durations))])
        if len(bn.durations) else None
    )
    resp_ip = bn.resp_ips[rng.integers(len(bn.resp_ips))]

    return ConnRecord(
        ts=0.0,                      # assigned at injection
        orig_ip="0.0.0.0",           # assigned at injection
        resp_ip=resp_ip,
        orig_p=int(orig_p),
        resp_p=int(resp_p),
        proto=str(proto),
        service=None if service is None else str(service),
        duration=duration,
        orig_bytes=orig_bytes,
        resp_bytes=resp_bytes,
        orig_pkts=orig_pkts,
        resp_pkts=resp_pkts,
        conn_state=str(conn_state),
        label=LABEL_UNLABELED,
    )


def _categorical_deficit_field(name: str) -> tuple[str, str] | None:
    if name.startswith("proto_"):
        return "proto", name[len("proto_"):]
    if name.startswith("conn_state_"):
        return "conn_state", name[len("conn_state_"):]
    return None


def generate_trigger(
    bn: BayesNet,
    proto: TriggerProto,
    assignment,
    selected: Sequence[int],
    seed: int,
    normalizer: FeatureNormalizer | None = None,
    max_records: int = 2000,
) -> Trigger:
    """Emit the minimal sampled-connection sequence whose re-aggregated
    count/sum features meet the prototype's values.

    Connections are pinned to the prototype's key port; when protocol or
    connection-state counts are among the selected features, each
    connection fixes that field to the value with the largest remaining
    deficit so the count targets are met exactly. Selected features that
    insertion cannot reach (min/max/distinct) are excluded from the
    achievement check with a warning.
    """
    rng = np.random.default_rng(seed)
    bearing = int(proto.point.key.resp_p)
    sel = list(selected)
    warnings: list[str] = []
    events: list[str] = []

    cs_sel = [f for f in sel if f in COUNT_SUM_FEATURES]
    skipped = [FEATURE_NAMES[f] for f in sel if f not in COUNT_SUM_FEATURES]
    if skipped:
        warnings.append("not-insertion-reachable:" + ",".join(skipped))
        logger.warning(
            "selected features %s are not reachable by insertion; "
            "excluded from the achievement check", skipped,
        )

    targets = {f: float(proto.point.values[f]) for f in cs_sel}
    # per-connection fixed categorical values, driven by count deficits
    count_fields: dict[str, dict[str, float]] = {}
    for f in list(targets):
        pair = _categorical_deficit_field(FEATURE_NAMES[f])
        if pair is not None:
            fld, val = pair
            count_fields.setdefault(fld, {})[val] = targets[f]

    records: list[ConnRecord] = []
    achieved = np.zeros(len(FEATURE_NAMES))
    key = AggregationKey(0, "0.0.0.0", bearing)

    def met() -> bool:
        return bool(records) and all(
            achieved[f] >= targets[f] - 1e-9 for f in cs_sel
        )

    while not met():
        if len(records) >= max_records:
            warnings.append("target-unreached")
            logger.warning(
                "generation stopped at %d records with targets unmet", max_records
            )
            break
        fixed: dict[str, object] = {"resp_p": bearing}
        for fld, deficits in count_fields.items():
            remaining = {
                v: t - achieved[FEATURE_INDEX[f"{fld}_{v}"]]
                for v, t in deficits.items()
            }
            best_v = max(sorted(remaining), key=lambda v: remaining[v])
            if remaining[best_v] > 0:
                fixed[fld] = best_v
        rec = sample_connection(bn, fixed, rng, events)
        records.append(rec)
        achieved = recompute_point(records, key).values

    point = recompute_point(records, key) if records else None
    if point is None:
        raise AttackError("generation produced no records")
    dist = (
        normalizer.distance(point.values[sel], proto.point.values[sel], sel)
        if normalizer is not None else float("nan")
    )
    if events:
        warnings.append(f"sampling-fallbacks:{len(events)}")
    return Trigger(
        records=tuple(records),
        variant="generated",
        selected_features=tuple(sel),
        achieved=point.values,
        distance=dist,
        bearing_port=bearing,
        source_host="generated",
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# Field-dependency diagnostics


DEPENDENCY_FIELDS = (
    "proto", "service", "conn_state", "orig_p", "resp_p",
    "orig_pkts", "resp_pkts", "orig_bytes", "resp_bytes", "duration",
)
_NUMERIC_DEP_FIELDS = frozenset(
    ("orig_p", "resp_p", "orig_pkts", "resp_pkts",
     "orig_bytes", "resp_bytes", "duration")
)


@dataclass(slots=True)
class DependencyReport:
    fields: tuple[str, ...]
    nmi: np.ndarray
    corr: np.ndarray


def _codes_for(records: Sequence[ConnRecord], fld: str, n_bins: int = 20) -> np.ndarray:
    raw = [getattr(r, fld) for r in records]
    if fld in _NUMERIC_DEP_FIELDS:
        vals = np.array([np.nan if v is None else float(v) for v in raw])
        present = ~np.isnan(vals)
        codes = np.zeros(len(vals), dtype=np.int64)  # absent -> code 0
        if present.any():
            pv = vals[present]
            qs = np.linspace(0, 100, n_bins + 1)[1:-1]
            edges = np.unique(np.percentile(pv, qs))
            codes[present] = np.searchsorted(edges, pv, side="right") + 1
        return codes
    seen: dict[str, int] = {}
    codes = np.empty(len(raw), dtype=np.int64)
    for i, v in enumerate(raw):
        s = "-" if v is None else str(v)
        codes[i] = seen.setdefault(s, len(seen))
    return codes


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def _nmi(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = a.max() + 1, b.max() + 1
    joint = np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb).astype(float)
    n = joint.sum()
    ha = _entropy(joint.sum(axis=1))
    hb = _entropy(joint.sum(axis=0))
    if ha == 0.0 or hb == 0.0:
        return 0.0  # constant field: NMI 0 by convention
    pj = joint / n
    pa = pj.sum(axis=1, keepdims=True)
    pb = pj.sum(axis=0, keepdims=True)
    mask = pj > 0
    mi = float((pj[mask] * np.log(pj[mask] / (pa @ pb)[mask])).sum())
    return max(0.0, min(1.0, mi / np.sqrt(ha * hb)))


def dependency_matrices(
    records: Sequence[ConnRecord],
    fields: Sequence[str] = DEPENDENCY_FIELDS,
) -> DependencyReport:
    """Pairwise normalized mutual information (equal-frequency bins for
    numerics) and Pearson correlation (numeric pairs; absent values count
    as zero) across the log fields."""
    if len(fields) < 2:
        raise ConfigError("dependency report needs at least two fields")
    if len(records) < 10:
        raise ConfigError("dependency report needs at least 10 records")
    fields = tuple(fields)
    codes = {f: _codes_for(records, f) for f in fields}
    numeric = {
        f: np.array([
            0.0 if getattr(r, f) is None else float(getattr(r, f)) for r in records
        ])
        for f in fields if f in _NUMERIC_DEP_FIELDS
    }
    k = len(fields)
    nmi = np.eye(k)
    corr = np.full((k, k), np.nan)
    for i in range(k):
        if fields[i] in numeric:
            corr[i, i] = 1.0
        for j in range(i + 1, k):
            nmi[i, j] = nmi[j, i] = _nmi(codes[fields[i]], codes[fields[j]])
            if fields[i] in numeric and fields[j] in numeric:
                a, b = numeric[fields[i]], numeric[fields[j]]
                if a.std() > 0 and b.std() > 0:
                    corr[i, j] = corr[j, i] = float(np.corrcoef(a, b)[0, 1])
    return DependencyReport(fields=fields, nmi=nmi, corr=corr)


def top_nmi_pairs(report: DependencyReport, k: int = 5) -> list[tuple[str, str]]:
    """Strongest off-diagonal associations, deterministically ordered."""
    pairs = []
    for i in range(len(report.fields)):
        for j in range(i + 1, len(report.fields)):
            pairs.append((-report.nmi[i, j], report.fields[i], report.fields[j]))
    pairs.sort()
    return [(a, b) for _, a, b in pairs[:k]]


# ---------------------------------------------------------------------------
# Persistence


def bayes_net_to_json(bn: BayesNet) -> dict:
    def kde_state(k: LogCountKDE) -> dict:
        return {
            "support": [float(v) for v in k.kde.support],
            "bandwidth": k.kde.bandwidth,
        }

    cpts = {}
    for node, cpt in bn.cpts.items():
        cpts[node] = {
            "parents": list(cpt.parents),
            "contexts": [
                {
                    "ctx": list(ctx),
                    "values": values,
                    "probs": [float(p) for p in probs],
                }
                for ctx, (values, probs) in sorted(
                    cpt.tables.items(), key=lambda kv: str(kv[0])
                )
            ],
            "marginal": {
                "values": cpt.marginal[0],
                "probs": [float(p) for p in cpt.marginal[1]],
            },
        }
    return {
        "format": "flowpoison-bayesnet-v1",
        "edges": {n: list(p) for n, p in DAG_EDGES.items()},
        "n_records": bn.n_records,
        "cpts": cpts,
        "orig_pkts_kde": kde_state(bn.orig_pkts_kde),
        "resp_pkts_buckets": [float(e) for e in bn.resp_pkts_buckets],
        "resp_pkts_kdes": [kde_state(k) for k in bn.resp_pkts_kdes],
        "resp_pkts_fallback": kde_state(bn.resp_pkts_fallback),
        "orig_bpp_kde": kde_state(bn.orig_bpp_kde),
        "resp_bpp_kde": kde_state(bn.resp_bpp_kde),
        "durations": [float(d) for d in bn.durations],
        "resp_ips": bn.resp_ips,
        "metadata": bn.metadata,
    }


def bayes_net_from_json(state: dict) -> BayesNet:
    if state.get("format") != "flowpoison-bayesnet-v1":
        raise ValueError("not a flowpoison Bayes-net file")

    def kde(st: dict) -> LogCountKDE:
        return LogCountKDE(GaussianKDE(np.asarray(st["support"]), st["bandwidth"]))

    cpts = {}
    for node, st in state["cpts"].items():
        cpt = CategoricalCPT(node, tuple(st["parents"]))
        cpt.tables = {
            tuple(e["ctx"]): (e["values"], np.asarray(e["probs"]))
            for e in st["contexts"]
        }
        cpt.marginal = (st["marginal"]["values"], np.asarray(st["marginal"]["probs"]))
        cpts[node] = cpt
    return BayesNet(
        cpts=cpts,
        orig_pkts_kde=kde(state["orig_pkts_kde"]),
        resp_pkts_buckets=np.asarray(state["resp_pkts_buckets"]),
        resp_pkts_kdes=[kde(s) for s in state["resp_pkts_kdes"]],
        resp_pkts_fallback=kde(state["resp_pkts_fallback"]),
        orig_bpp_kde=kde(state["orig_bpp_kde"]),
        resp_bpp_kde=kde(state["resp_bpp_kde"]),
        durations=np.asarray(state["durations"]),
        resp_ips=list(state["resp_ips"]),
        n_records=state["n_records"],
        metadata=state["metadata"],
    )


def save_bayes_net(bn: BayesNet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bayes_net_to_json(bn), fh, sort_keys=True)


def load_bayes_net(path: str) -> BayesNet:
    with open(path, "r", encoding="utf-8") as fh:
        return bayes_net_from_json(json.load(fh))
