"""Trigger crafting and clean-label injection (attack phases II-V).

Phase II computes the ideal per-feature *assignment* (a high percentile
of the victim class's values, so it is always realizable by inserting
traffic). Phase III picks the existing victim-class feature point nearest
that assignment (the *prototype*). Phase IV searches the adversary's raw
per-host connection streams for the contiguous subsequence whose
re-aggregated features best approximate the prototype (the *trigger*).
Phase V clones the trigger into selected windows: originator IPs are
rewritten to the window's internal host, trigger-bearing connections are
re-pointed at the window's key port so their feature mass lands on the
poisoned point, timestamps are remapped into the tail of the window, and
nothing else is touched — labels included (clean-label, insertion-only).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import AttackError, ConfigError
from .featurize import (
    COUNT_SUM_FEATURES,
    FEATURE_NAMES,
    AggregationKey,
    FeaturePoint,
    internal_endpoint,
    recompute_point,
)
from .flowlog import (
    LABEL_NONTARGET,
    LABEL_TARGET,
    ConnRecord,
    Dataset,
    SubnetMatcher,
)

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class Assignment:
    """Ideal trigger values for the selected features (Phase II)."""

    features: tuple[int, ...]
    values: np.ndarray
    percentile: float


@dataclass(slots=True)
class TriggerProto:
    """The victim-class point closest to the assignment (Phase III)."""

    point: FeaturePoint
    index: int
    distance: float


@dataclass(slots=True)
class Trigger:
    """An ordered, insertable connection sequence realizing the prototype.

    ``achieved`` is the full feature vector of the trigger re-aggregated
    at the prototype's port key; ``bearing_port`` is that key port (the
    port whose group carries the backdoor pattern).
    """

    records: tuple[ConnRecord, ...]
    variant: str
    selected_features: tuple[int, ...]
    achieved: np.ndarray
    distance: float
    bearing_port: int
    source_host: str
    warnings: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.records)


@dataclass(slots=True)
class InjectionRecord:
    """One poisoned point in an injection manifest."""

    key: AggregationKey
    point_index: int
    pre_values: np.ndarray
    injected: tuple[ConnRecord, ...]


class FeatureNormalizer:
    """Per-feature min-max scaling fit on the adversary's victim-class
    points. Raw Euclidean distance would be dominated by byte sums;
    zero-range features contribute nothing."""

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo = lo
        self.span = hi - lo

    @classmethod
    def from_points(cls, points: Sequence[FeaturePoint]) -> "FeatureNormalizer":
        if not points:
            raise AttackError("cannot fit a normalizer on zero points")
        X = np.stack([p.values for p in points])
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, values: np.ndarray, features: Sequence[int]) -> np.ndarray:
        f = np.asarray(features)
        span = self.span[f]
        vals = np.asarray(values, dtype=np.float64)
        out = np.zeros(vals.shape)
        nz = span > 0
        out[..., nz] = (vals[..., nz] - self.lo[f][nz]) / span[nz]
        return out

    def distance(self, a: np.ndarray, b: np.ndarray, features: Sequence[int]) -> float:
        da = self.transform(a, features) - self.transform(b, features)
        return float(np.sqrt(np.sum(da ** 2)))


def nearest_rank_percentile(values: np.ndarray, percentile: float) -> float:
    """Classic nearest-rank percentile: the ceil(p/100 * n)-th smallest
    value. p=100 yields the maximum; the result is always a realized
    value, which keeps assignments attainable by insertion."""
    if not (0.0 < percentile <= 100.0):
        raise ConfigError(f"percentile must be in (0, 100], got {percentile}")
    v = np.sort(np.asarray(values))
    rank = max(1, int(np.ceil(percentile / 100.0 * len(v))))
    return float(v[rank - 1])


def compute_assignment(
    nontarget_points: Sequence[FeaturePoint],
    selected: Sequence[int],
    percentile: float = 95.0,
) -> Assignment:
    """Per-feature nearest-rank percentile over victim-class points."""
    if not nontarget_points:
        raise AttackError("assignment requires at least one victim-class point")
    X = np.stack([p.values for p in nontarget_points])
    values = np.array(
        [nearest_rank_percentile(X[:, f], percentile) for f in selected]
    )
    return Assignment(features=tuple(selected), values=values, percentile=percentile)


def find_prototype(
    nontarget_points: Sequence[FeaturePoint],
    assignment: Assignment,
    normalizer: FeatureNormalizer | None = None,
) -> TriggerProto:
    """Mimicry step: the point with the lowest normalized Euclidean
    distance from the assignment in the selected-feature subspace; ties
    resolve to the lowest point index."""
    if not nontarget_points:
        raise AttackError("prototype search requires victim-class points")
    if not assignment.features:
        raise AttackError("assignment is empty")
    norm = normalizer or FeatureNormalizer.from_points(nontarget_points)
    sel = list(assignment.features)
    X = np.stack([p.values[sel] for p in nontarget_points])
    target = norm.transform(assignment.values, sel)
    diff = norm.transform(X, sel) - target
    d = np.sqrt((diff ** 2).sum(axis=1))
    idx = int(np.argmin(d))  # first minimum = lowest index
    return TriggerProto(point=nontarget_points[idx], index=idx, distance=float(d[idx]))


def default_l_max(proto: TriggerProto, floor: int = 10, cap: int = 500) -> int:
    return int(min(cap, max(floor, 2 * len(proto.point.provenance))))


def _feature_contribs(
    records: list[ConnRecord],
    selected: Sequence[int],
    bearing_port: int,
    host: str,
    matcher: SubnetMatcher | None,
) -> list[np.ndarray]:
    """Per-record building blocks for the windowed scan, one entry per
    selected feature: additive contributions for count/sum features, raw
    values (nan = no contribution) for min/max, and previous-occurrence
    indices for the distinct counts."""
    n = len(records)
    on_port = np.fromiter((r.resp_p == bearing_port for r in records), bool, n)
    out: list[np.ndarray] = []
    for f in selected:
        name = FEATURE_NAMES[f]
        if name.startswith("proto_"):
            p = name[len("proto_"):]
            arr = (
                np.fromiter((r.proto == p for r in records), bool, n) & on_port
            ).astype(np.float64)
        elif name.startswith("conn_state_"):
            s = name[len("conn_state_"):]
            arr = (
                np.fromiter((r.conn_state == s for r in records), bool, n) & on_port
            ).astype(np.float64)
        elif name == "distinct_external_ips":
            last: dict[str, int] = {}
            arr = np.empty(n)
            for j, r in enumerate(records):
                other = r.resp_ip if r.orig_ip == host else r.orig_ip
                if matcher is not None and other in matcher:
                    arr[j] = np.inf  # internal counterparts never count
                else:
                    arr[j] = last.get(other, -1)
                    last[other] = j
        elif name == "distinct_resp_ports":
            lastp: dict[int, int] = {}
            arr = np.empty(n)
            for j, r in enumerate(records):
                if r.proto == "icmp":
                    arr[j] = np.inf
                else:
                    arr[j] = lastp.get(r.resp_p, -1)
                    lastp[r.resp_p] = j
        else:
            field, _, stat = name.rpartition("_")
            vals = np.array(
                [
                    np.nan if getattr(r, field) is None else float(getattr(r, field))
                    for r in records
                ]
            )
            vals[~on_port] = np.nan
            if stat == "sum":
                arr = np.nan_to_num(vals, nan=0.0)
            else:
                arr = vals  # consumed by fmin/fmax accumulate
        out.append(arr)
    return out


def _scan_values(
    contribs: list[np.ndarray],
    selected: Sequence[int],
    start: int,
    limit: int,
) -> np.ndarray:
    """Feature values of the candidate slices [start, start+l) for
    l = 1..limit; shape (limit, n_selected)."""
    out = np.empty((limit, len(selected)))
    for c, f in enumerate(selected):
        window = contribs[c][start:start + limit]
        name = FEATURE_NAMES[f]
        if name.startswith(("proto_", "conn_state_")) or name.endswith("_sum"):
            out[:, c] = np.cumsum(window)
        elif name.startswith("distinct_"):
            # a record opens a new distinct value iff its previous
            # occurrence lies before the window start
            out[:, c] = np.cumsum(window < start)
        elif name.endswith("_min"):
            out[:, c] = np.nan_to_num(np.fmin.accumulate(window), nan=0.0)
        else:
            out[:, c] = np.nan_to_num(np.fmax.accumulate(window), nan=0.0)
    return out


def nontarget_host_streams(adv: Dataset) -> dict[str, list[int]]:
    """Time-ordered victim-class record indices per internal host; these
    are the connections the adversary's own software produced and can
    replay."""
    matcher = SubnetMatcher(adv.internal_subnets)
    streams: dict[str, list[int]] = {}
    for idx, rec in enumerate(adv.records):
        if rec.label != LABEL_NONTARGET:
            continue
        ip = internal_endpoint(rec, matcher)
        if ip is not None:
            streams.setdefault(ip, []).append(idx)
    return streams


def extract_full_trigger(
    adv: Dataset,
    proto: TriggerProto,
    selected: Sequence[int],
    normalizer: FeatureNormalizer,
    l_max: int | None = None,
) -> Trigger:
    """Exhaustive contiguous-subsequence search (Phase IV).

    Every slice of length 1..l_max of every per-host, time-ordered
    victim-class stream is featurized under a single synthetic window at
    the prototype's key port and compared with the prototype in the
    normalized selected-feature subspace. Ties prefer shorter slices,
    then earlier positions in the source log.
    """
    streams = nontarget_host_streams(adv)
    if not streams:
        raise AttackError("no victim-class records available for the trigger search")
    if l_max is None:
        l_max = default_l_max(proto)
    if l_max < 1:
        raise ConfigError(f"l_max must be >= 1, got {l_max}")

    matcher = SubnetMatcher(adv.internal_subnets)
    bearing = proto.point.key.resp_p
    sel = list(selected)
    target = normalizer.transform(proto.point.values[sel], sel)
    span = normalizer.span[sel]
    lo = normalizer.lo[sel]
    nz = span > 0

    best: tuple[float, int, int] | None = None  # (dist2, length, global index)
    best_slice: tuple[str, int, int] | None = None

    for host in sorted(streams):
        idxs = streams[host]
        records = [adv.records[i] for i in idxs]
        contribs = _feature_contribs(records, sel, bearing, host, matcher)
        n = len(records)
        for start in range(n):
            limit = min(l_max, n - start)
            vals = _scan_values(contribs, sel, start, limit)
            normed = np.zeros_like(vals)
            normed[:, nz] = (vals[:, nz] - lo[nz]) / span[nz]
            d2 = ((normed - target) ** 2).sum(axis=1)
            li = int(np.argmin(d2))  # first minimum = shortest slice
            cand = (float(d2[li]), li + 1, idxs[start])
            if best is None or cand < best:
                best = cand
                best_slice = (host, start, li + 1)

    assert best is not None and best_slice is not None
    host, start, length = best_slice
    idxs = streams[host]
    records = tuple(adv.records[i] for i in idxs[start:start + length])
    achieved = recompute_point(
        records,
        AggregationKey(0, host, bearing),
        adv.internal_subnets,
    ).values
    return Trigger(
        records=records,
        variant="full",
        selected_features=tuple(sel),
        achieved=achieved,
        distance=float(np.sqrt(best[0])),
        bearing_port=bearing,
        source_host=host,
    )


def _contribution_mask(
    records: Sequence[ConnRecord],
    selected: Sequence[int],
    bearing_port: int,
    host: str,
    matcher: SubnetMatcher | None,
) -> list[bool]:
    """keep[i] is True iff record i contributes to at least one selected
    feature. For the distinct counts only the first occurrence of a value
    matters; later repeats are removable."""
    names = [FEATURE_NAMES[f] for f in selected]
    want_ports = "distinct_resp_ports" in names
    want_ips = "distinct_external_ips" in names
    seen_ports: set[int] = set()
    seen_ips: set[str] = set()
    keep = []
    for rec in records:
        hit = False
        if want_ports and rec.proto != "icmp" and rec.resp_p not in seen_ports:
            seen_ports.add(rec.resp_p)
            hit = True
        if want_ips:
            other = rec.resp_ip if rec.orig_ip == host else rec.orig_ip
            if (matcher is None or other not in matcher) and other not in seen_ips:
                seen_ips.add(other)
                hit = True
        if not hit and rec.resp_p == bearing_port:
            for name in names:
                if name.startswith("proto_"):
                    hit = rec.proto == name[len("proto_"):]
                elif name.startswith("conn_state_"):
                    hit = rec.conn_state == name[len("conn_state_"):]
                elif name.startswith("distinct_"):
                    continue
                else:
                    field, _, stat = name.rpartition("_")
                    value = getattr(rec, field)
                    if value is None:
                        hit = False
                    else:
                        hit = value > 0 if stat == "sum" else True
                if hit:
                    break
        keep.append(hit)
    return keep


def reduce_trigger(
    trigger: Trigger,
    proto: TriggerProto,
    normalizer: FeatureNormalizer,
    internal_subnets: Sequence[str] = (),
) -> Trigger:
    """Footprint minimization.

    First drops connections that contribute to no selected feature
    (typically traffic on other destination ports), then returns the
    smallest contiguous run of what remains whose re-aggregated values
    stay within the full trigger's distance to the prototype, or match it
    on every selected count/sum feature. Falls back to the full trigger
    with a warning when no reduction survives those constraints.
    """
    if trigger.variant != "full":
        raise AttackError("only full triggers can be reduced")
    sel = list(trigger.selected_features)
    matcher = SubnetMatcher(internal_subnets) if internal_subnets else None
    host = trigger.source_host
    bearing = trigger.bearing_port

    mask = _contribution_mask(trigger.records, sel, bearing, host, matcher)
    kept = [r for r, m in zip(trigger.records, mask) if m]
    cs_sel = [f for f in sel if f in COUNT_SUM_FEATURES]
    cs_pos = [i for i, f in enumerate(sel) if f in COUNT_SUM_FEATURES]
    full_cs = trigger.achieved[cs_sel]
    key = AggregationKey(0, host, bearing)

    m = len(kept)
    for length in range(1, m + 1):
        for start in range(0, m - length + 1):
            run = tuple(kept[start:start + length])
            point = recompute_point(run, key, internal_subnets)
            dist = normalizer.distance(
                point.values[sel], proto.point.values[sel], sel
            )
            cs_ok = bool(np.all(point.values[cs_sel] >= full_cs - 1e-9))
            if dist <= trigger.distance + 1e-12 or cs_ok:
                # an already-minimal trigger comes back unchanged here
                return Trigger(
                    records=run,
                    variant="reduced",
                    selected_features=trigger.selected_features,
                    achieved=point.values,
                    distance=dist,
                    bearing_port=bearing,
                    source_host=host,
                )
    logger.warning("trigger reduction found no smaller candidate; keeping full")
    return replace(
        trigger,
        variant="reduced",
        warnings=trigger.warnings + ("reduction-failed",),
    )


def _clone_trigger(
    trigger: Trigger,
    key: AggregationKey,
    label: str,
    window_seconds: float,
    placement: float,
) -> tuple[ConnRecord, ...]:
    """Clone trigger records into a victim window.

    The originator IP becomes the window's internal host; trigger-bearing
    records (those on the trigger's key port) move to the window's key
    port so their aggregate lands on the poisoned point. The trigger's
    time span maps linearly into the final (1 - placement) share of the
    window with order and relative gaps preserved.
    """
    tss = [r.ts for r in trigger.records]
    t0, t1 = min(tss), max(tss)
    src_span = t1 - t0
    margin = window_seconds / 1000.0
    base = key.window_index * window_seconds + placement * window_seconds
    dst_span = (1.0 - placement) * window_seconds - margin
    scale = dst_span / src_span if src_span > 0 else 0.0
    clones = []
    for rec in trigger.records:
        resp_p = rec.resp_p
        if rec.proto != "icmp" and rec.resp_p == trigger.bearing_port:
            resp_p = key.resp_p
        clones.append(replace(
            rec,
            ts=base + (rec.ts - t0) * scale,
            orig_ip=key.internal_ip,
            resp_p=resp_p,
            label=label,
        ))
    return tuple(clones)


def _merge(ds: Dataset, new_records: list[ConnRecord]) -> Dataset:
    records = list(ds.records)
    records.extend(new_records)
    records.sort(key=lambda r: r.ts)  # stable: originals keep their order
    return Dataset(
        records=records,
        internal_subnets=ds.internal_subnets,
        scenario_name=ds.scenario_name,
    )


def inject_training(
    train: Dataset,
    points: Sequence[FeaturePoint],
    trigger: Trigger,
    p_percent: float,
    seed: int,
    window_seconds: float = 30.0,
    placement: float = 0.5,
) -> tuple[Dataset, list[InjectionRecord]]:
    """Poison p% of the target-class feature points (clean-label).

    Sampled uniformly by point count; every clone keeps the target label
    (the poisoned windows belong to clean hosts, so ground-truth labeling
    would agree). Original records are never modified or removed. With
    p=0 the input dataset is returned unchanged.
    """
    if not (0.0 <= p_percent <= 100.0):
        raise ConfigError(f"p_percent must be in [0, 100], got {p_percent}")
    target_idx = [i for i, p in enumerate(points) if p.label == LABEL_TARGET]
    if not target_idx:
        raise AttackError("no target-class points to poison")
    if p_percent == 0.0:
        return train, []
    count = int(round(p_percent / 100.0 * len(target_idx)))
    if count == 0:
        logger.warning(
            "p=%.4f%% of %d target points rounds to zero; injecting one point",
            p_percent, len(target_idx),
        )
        count = 1
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(target_idx), size=count, replace=False).tolist())

    manifest: list[InjectionRecord] = []
    additions: list[ConnRecord] = []
    for c in chosen:
        pi = target_idx[c]
        point = points[pi]
        clones = _clone_trigger(
            trigger, point.key, LABEL_TARGET, window_seconds, placement
        )
        additions.extend(clones)
        manifest.append(InjectionRecord(
            key=point.key,
            point_index=pi,
            pre_values=point.values.copy(),
            injected=clones,
        ))
    return _merge(train, additions), manifest


def inject_test_points(
    test: Dataset,
    points: Sequence[FeaturePoint],
    eligible: Sequence[int],
    trigger: Trigger,
    n_points: int,
    seed: int,
    window_seconds: float = 30.0,
    placement: float = 0.5,
) -> tuple[Dataset, list[InjectionRecord]]:
    """Splice the trigger into sampled victim-class test windows.

    ``eligible`` indexes the victim-class points the clean model already
    classifies correctly; if fewer than ``n_points`` exist they are all
    used (with a warning). Clones carry the victim-class label: at test
    time the trigger runs on infected hosts.
    """
    elig = sorted(int(i) for i in eligible)
    for i in elig:
        if points[i].label != LABEL_NONTARGET:
            raise AttackError(f"eligible point {i} is not victim-class")
    if n_points <= 0:
        return test, []
    if len(elig) < n_points:
        logger.warning(
            "only %d eligible victim points (requested %d); using all",
            len(elig), n_points,
        )
        chosen = list(range(len(elig)))
    else:
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(len(elig), size=n_points, replace=False).tolist())

    manifest: list[InjectionRecord] = []
    additions: list[ConnRecord] = []
    for c in chosen:
        pi = elig[c]
        point = points[pi]
        clones = _clone_trigger(
            trigger, point.key, LABEL_NONTARGET, window_seconds, placement
        )
        additions.extend(clones)
        manifest.append(InjectionRecord(
            key=point.key,
            point_index=pi,
            pre_values=point.values.copy(),
            injected=clones,
        ))
    return _merge(test, additions), manifest


def write_manifest(manifest: Sequence[InjectionRecord], dest: str) -> None:
    """Line-delimited manifest: point key, clone count, achieved values."""
    import json

    with open(dest, "w", encoding="utf-8") as fh:
        for entry in manifest:
            fh.write(json.dumps({
                "window_index": entry.key.window_index,
                "internal_ip": entry.key.internal_ip,
                "resp_p": entry.key.resp_p,
                "point_index": entry.point_index,
                "n_injected": len(entry.injected),
                "pre_values": [float(v) for v in entry.pre_values],
            }, sort_keys=True) + "\n")
