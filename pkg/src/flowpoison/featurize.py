"""Feature mapping from connection sequences to model inputs.

Two representations are supported:

* **Windows** — statistical aggregation keyed by (30-second window,
  internal IP, destination port). Per key: connection counts per
  transport protocol (3) and per connection state (13); sum/min/max over
  originator/responder packets and bytes and over duration (15); plus two
  distinct counts computed at the (window, internal IP) level and
  replicated onto every point sharing that pair (2). 33 named features.
* **Blocks** — contiguous runs of exactly ``block_len`` connections per
  internal host, encoded as a flat numeric vector (scaled numerics plus
  one-hot protocol / connection-state / service buckets) for the
  auto-encoder path.

Every point carries provenance back to its constituent records so that
problem-space injection can be verified by re-aggregation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .flowlog import (
    CONN_STATES,
    LABEL_NONTARGET,
    LABEL_TARGET,
    PROTOS,
    ConnRecord,
    Dataset,
    SubnetMatcher,
)

VOLUME_FIELDS = ("orig_pkts", "resp_pkts", "orig_bytes", "resp_bytes", "duration")

FEATURE_NAMES: tuple[str, ...] = (
    tuple(f"proto_{p}" for p in PROTOS)
    + tuple(f"conn_state_{s}" for s in CONN_STATES)
    + tuple(f"{f}_{stat}" for f in VOLUME_FIELDS for stat in ("sum", "min", "max"))
    + ("distinct_external_ips", "distinct_resp_ports")
)

N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

# Count/sum features grow by exactly the inserted records' contribution;
# they are the ones a trigger can reliably realize. Distinct counts are
# monotone under insertion but not additive, min/max not even monotone in
# the useful direction.
COUNT_SUM_FEATURES: tuple[int, ...] = tuple(
    i for i, n in enumerate(FEATURE_NAMES)
    if n.startswith(("proto_", "conn_state_")) or n.endswith("_sum")
)

_PROTO_IDX = {p: i for i, p in enumerate(PROTOS)}
_STATE_IDX = {s: i + len(PROTOS) for i, s in enumerate(CONN_STATES)}
_VOL_BASE = len(PROTOS) + len(CONN_STATES)
_DISTINCT_IPS = FEATURE_INDEX["distinct_external_ips"]
_DISTINCT_PORTS = FEATURE_INDEX["distinct_resp_ports"]


@dataclass(frozen=True)
class AggregationKey:
    """(time window, internal IP, destination port)."""

    window_index: int
    internal_ip: str
    resp_p: int


@dataclass(slots=True)
class FeaturePoint:
    """One aggregated data point.

    ``provenance`` indexes every record of the point's (window, internal
    IP) pair in the source dataset; the port-keyed features of this point
    come from the subset matching ``key.resp_p``, which is exactly how
    :func:`recompute_point` re-derives them. Sibling points of one pair
    share the same provenance tuple.
    """

    key: AggregationKey
    values: np.ndarray
    label: str
    provenance: tuple[int, ...]

    def value(self, name: str) -> float:
        return float(self.values[FEATURE_INDEX[name]])


def internal_endpoint(rec: ConnRecord, matcher: SubnetMatcher) -> str | None:
    """The endpoint that keys the record, or None if neither endpoint is
    internal. When both are internal the originator wins."""
    if rec.orig_ip in matcher:
        return rec.orig_ip
    if rec.resp_ip in matcher:
        return rec.resp_ip
    return None


class _GroupAcc:
    """Streaming accumulator for one (window, ip, port) group."""

    __slots__ = ("counts", "sums", "mins", "maxs", "nontarget")

    def __init__(self) -> None:
        self.counts = [0] * (len(PROTOS) + len(CONN_STATES))
        self.sums = [0.0] * len(VOLUME_FIELDS)
        self.mins: list[float | None] = [None] * len(VOLUME_FIELDS)
        self.maxs: list[float | None] = [None] * len(VOLUME_FIELDS)
        self.nontarget = False

    def add(self, rec: ConnRecord) -> None:
        self.counts[_PROTO_IDX[rec.proto]] += 1
        self.counts[_STATE_IDX[rec.conn_state]] += 1
        if rec.label == LABEL_NONTARGET:
            self.nontarget = True
        for i, val in enumerate(
            (rec.orig_pkts, rec.resp_pkts, rec.orig_bytes, rec.resp_bytes, rec.duration)
        ):
            if val is None:
                continue
            self.sums[i] += val
            mn, mx = self.mins[i], self.maxs[i]
            if mn is None or val < mn:
                self.mins[i] = val
            if mx is None or val > mx:
                self.maxs[i] = val

    def fill(self, out: np.ndarray) -> None:
        out[: _VOL_BASE] = self.counts
        for i in range(len(VOLUME_FIELDS)):
            base = _VOL_BASE + 3 * i
            out[base] = self.sums[i]
            # Absent optionals are excluded from min/max; an all-absent
            # triple collapses to sum=min=max=0.
            out[base + 1] = self.mins[i] if self.mins[i] is not None else 0.0
            out[base + 2] = self.maxs[i] if self.maxs[i] is not None else 0.0


def aggregate_windows(ds: Dataset, window_seconds: float = 30.0) -> list[FeaturePoint]:
    """Aggregate a labeled dataset into window feature points.

    One point per (window, internal IP, destination port) with at least
    one connection. The two distinct-count features are computed per
    (window, internal IP) and replicated onto every point of that pair.
    A point is nontarget iff any of its port-group records is nontarget.
    """
    if not ds.internal_subnets:
        raise ConfigError("internal_subnets must be set before aggregation")
    matcher = SubnetMatcher(ds.internal_subnets)

    groups: dict[tuple[int, str, int], _GroupAcc] = {}
    pair_prov: dict[tuple[int, str], list[int]] = {}
    pair_ext: dict[tuple[int, str], set[str]] = {}
    pair_ports: dict[tuple[int, str], set[int]] = {}

    for idx, rec in enumerate(ds.records):
        ip = internal_endpoint(rec, matcher)
        if ip is None:
            continue
        w = int(rec.ts // window_seconds)
        pair = (w, ip)
        acc = groups.get((w, ip, rec.resp_p))
        if acc is None:
            acc = groups[(w, ip, rec.resp_p)] = _GroupAcc()
            if pair not in pair_prov:
                pair_prov[pair] = []
                pair_ext[pair] = set()
                pair_ports[pair] = set()
        acc.add(rec)
        pair_prov[pair].append(idx)
        other = rec.resp_ip if rec.orig_ip == ip else rec.orig_ip
        if other not in matcher:
            pair_ext[pair].add(other)
        if rec.proto != "icmp":
            pair_ports[pair].add(rec.resp_p)

    points: list[FeaturePoint] = []
    prov_cache: dict[tuple[int, str], tuple[int, ...]] = {}
    for (w, ip, port) in sorted(groups):
        acc = groups[(w, ip, port)]
        pair = (w, ip)
        prov = prov_cache.get(pair)
        if prov is None:
            prov = prov_cache[pair] = tuple(pair_prov[pair])
        values = np.zeros(N_FEATURES)
        acc.fill(values)
        values[_DISTINCT_IPS] = len(pair_ext[pair])
        values[_DISTINCT_PORTS] = len(pair_ports[pair])
        points.append(FeaturePoint(
            key=AggregationKey(w, ip, port),
            values=values,
            label=LABEL_NONTARGET if acc.nontarget else LABEL_TARGET,
            provenance=prov,
        ))
    return points


def recompute_point(
    records: Sequence[ConnRecord],
    key: AggregationKey,
    internal_subnets: Sequence[str] = (),
) -> FeaturePoint:
    """Aggregate ``records`` as one synthetic (window, host) group.

    Pure function: port-keyed features come from the records matching
    ``key.resp_p``; the distinct counts span all given records, with the
    external side resolved against ``key.internal_ip`` (and filtered to
    truly-external addresses when ``internal_subnets`` is given). Window
    boundaries are deliberately ignored so trigger candidates can be
    scored under a single synthetic window. Restricted to a real point's
    provenance and key, the result equals :func:`aggregate_windows`.
    """
    if not records:
        raise ValueError("recompute_point needs at least one record")
    matcher = SubnetMatcher(internal_subnets) if internal_subnets else None
    acc = _GroupAcc()
    ext: set[str] = set()
    ports: set[int] = set()
    for rec in records:
        other = rec.resp_ip if rec.orig_ip == key.internal_ip else rec.orig_ip
        if matcher is None or other not in matcher:
            ext.add(other)
        if rec.proto != "icmp":
            ports.add(rec.resp_p)
        if rec.resp_p == key.resp_p:
            acc.add(rec)
    values = np.zeros(N_FEATURES)
    acc.fill(values)
    values[_DISTINCT_IPS] = len(ext)
    values[_DISTINCT_PORTS] = len(ports)
    return FeaturePoint(
        key=key,
        values=values,
        label=LABEL_NONTARGET if acc.nontarget else LABEL_TARGET,
        provenance=(),
    )


def feature_matrix(points: Sequence[FeaturePoint]) -> tuple[np.ndarray, np.ndarray]:
    """Stack points into (X, y) with y=1 for the nontarget class."""
    if not points:
        return np.zeros((0, N_FEATURES)), np.zeros(0, dtype=np.int64)
    X = np.stack([p.values for p in points])
    y = np.fromiter(
        (1 if p.label == LABEL_NONTARGET else 0 for p in points),
        dtype=np.int64, count=len(points),
    )
    return X, y


# ---------------------------------------------------------------------------
# Block representation (auto-encoder path)


@dataclass(slots=True)
class BlockPoint:
    """A run of exactly ``block_len`` consecutive connections of one
    internal host. ``provenance`` indexes the source dataset."""

    host_ip: str
    records: tuple[ConnRecord, ...]
    label: str
    provenance: tuple[int, ...]


def host_streams(ds: Dataset) -> dict[str, list[int]]:
    """Time-ordered record indices per internal host (the host a record
    keys to; see :func:`internal_endpoint`)."""
    if not ds.internal_subnets:
        raise ConfigError("internal_subnets must be set before blockizing")
    matcher = SubnetMatcher(ds.internal_subnets)
    streams: dict[str, list[int]] = {}
    for idx, rec in enumerate(ds.records):
        ip = internal_endpoint(rec, matcher)
        if ip is not None:
            streams.setdefault(ip, []).append(idx)
    return streams


def blockize(ds: Dataset, block_len: int = 100) -> list[BlockPoint]:
    """Cut each internal host stream into consecutive non-overlapping
    blocks of ``block_len`` records; trailing partial blocks are dropped."""
    if block_len < 1:
        raise ConfigError(f"block_len must be >= 1, got {block_len}")
    blocks: list[BlockPoint] = []
    streams = host_streams(ds)
    for ip in sorted(streams):
        idxs = streams[ip]
        for start in range(0, len(idxs) - block_len + 1, block_len):
            chunk = idxs[start:start + block_len]
            recs = tuple(ds.records[i] for i in chunk)
            label = (
                LABEL_NONTARGET
                if any(r.label == LABEL_NONTARGET for r in recs)
                else LABEL_TARGET
            )
            blocks.append(BlockPoint(
                host_ip=ip, records=recs, label=label, provenance=tuple(chunk),
            ))
    return blocks


class BlockEncoder:
    """Per-connection encoding: scaled numerics + one-hot categoricals.

    Numeric fields are log1p-transformed and min-max scaled with
    constants fit on training data only (values outside the fitted range
    clip to [0, 1]); ports scale by 1/65535. Service uses the top-10
    training services plus an "other" bucket; an absent service is a
    value in its own right and may claim a top-10 slot. The categorical
    part of the encoding is invertible via :meth:`decode_categoricals`.
    """

    NUMERIC_FIELDS = ("duration", "orig_bytes", "resp_bytes", "orig_pkts", "resp_pkts")
    N_SERVICES = 10

    def __init__(self) -> None:
        self.lo = np.zeros(len(self.NUMERIC_FIELDS))
        self.hi = np.ones(len(self.NUMERIC_FIELDS))
        self.services: tuple[str, ...] = ()
        self._svc_idx: dict[str, int] = {}
        self.fitted = False

    @property
    def conn_dim(self) -> int:
        return 2 + len(self.NUMERIC_FIELDS) + len(PROTOS) + len(CONN_STATES) \
            + len(self.services) + 1

    def fit(self, records: Iterable[ConnRecord]) -> "BlockEncoder":
        svc_counts: dict[str, int] = {}
        vals: list[list[float]] = [[] for _ in self.NUMERIC_FIELDS]
        for rec in records:
            svc = rec.service if rec.service is not None else "-"
            svc_counts[svc] = svc_counts.get(svc, 0) + 1
            for i, f in enumerate(self.NUMERIC_FIELDS):
                v = getattr(rec, f)
                if v is not None:
                    vals[i].append(math.log1p(v))
        ranked = sorted(svc_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        self.services = tuple(name for name, _ in ranked[: self.N_SERVICES])
        self._svc_idx = {s: i for i, s in enumerate(self.services)}
        for i, column in enumerate(vals):
            if column:
                self.lo[i] = min(column)
                self.hi[i] = max(column)
            else:
                self.lo[i], self.hi[i] = 0.0, 1.0
        self.fitted = True
        return self

    def encode_record(self, rec: ConnRecord, out: np.ndarray) -> None:
        out[0] = rec.orig_p / 65535.0
        out[1] = rec.resp_p / 65535.0
        pos = 2
        for i, f in enumerate(self.NUMERIC_FIELDS):
            v = getattr(rec, f)
            if v is None:
                out[pos + i] = 0.0
            else:
                span = self.hi[i] - self.lo[i]
                scaled = (math.log1p(v) - self.lo[i]) / span if span > 0 else 0.0
                out[pos + i] = min(1.0, max(0.0, scaled))
        pos += len(self.NUMERIC_FIELDS)
        out[pos + _PROTO_IDX[rec.proto]] = 1.0
        pos += len(PROTOS)
        out[pos + CONN_STATES.index(rec.conn_state)] = 1.0
        pos += len(CONN_STATES)
        svc = rec.service if rec.service is not None else "-"
        out[pos + self._svc_idx.get(svc, len(self.services))] = 1.0

    def encode_block(self, records: Sequence[ConnRecord]) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("encoder must be fit before encoding")
        d = self.conn_dim
        vec = np.zeros(len(records) * d)
        for j, rec in enumerate(records):
            self.encode_record(rec, vec[j * d:(j + 1) * d])
        return vec

    def decode_categoricals(self, vec: np.ndarray) -> list[tuple[str, str, str]]:
        """Recover the (proto, conn_state, service bucket) sequence."""
        d = self.conn_dim
        if len(vec) % d:
            raise ValueError("vector length is not a multiple of the record dim")
        out = []
        base_proto = 2 + len(self.NUMERIC_FIELDS)
        base_state = base_proto + len(PROTOS)
        base_svc = base_state + len(CONN_STATES)
        for j in range(len(vec) // d):
            row = vec[j * d:(j + 1) * d]
            proto = PROTOS[int(np.argmax(row[base_proto:base_state]))]
            state = CONN_STATES[int(np.argmax(row[base_state:base_svc]))]
            si = int(np.argmax(row[base_svc:base_svc + len(self.services) + 1]))
            svc = self.services[si] if si < len(self.services) else "other"
            out.append((proto, state, svc))
        return out


def block_matrix(
    blocks: Sequence[BlockPoint], encoder: BlockEncoder
) -> tuple[np.ndarray, np.ndarray]:
    """Encode blocks into (X, y) with y=1 for the nontarget class."""
    if not blocks:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    X = np.stack([encoder.encode_block(b.records) for b in blocks])
    y = np.fromiter(
        (1 if b.label == LABEL_NONTARGET else 0 for b in blocks),
        dtype=np.int64, count=len(blocks),
    )
    return X, y


def write_feature_matrix(
    points: Sequence[FeaturePoint], dest: str
) -> None:
    """Persist window features as columnar text with a named header."""
    X, y = feature_matrix(points)
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write("#flowpoison-features\tv1\twindows\n")
        fh.write(
            "#columns\twindow_index\tinternal_ip\tresp_p\tlabel\t"
            + "\t".join(FEATURE_NAMES) + "\n"
        )
        for p, row in zip(points, X):
            fh.write(
                f"{p.key.window_index}\t{p.key.internal_ip}\t{p.key.resp_p}\t"
                f"{p.label}\t" + "\t".join(repr(float(v)) for v in row) + "\n"
            )
