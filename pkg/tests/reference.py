"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (single pass, plain dicts and
sets, explicit loops) and shares no code with the package beyond the
record type, so it can serve as a second opinion on the aggregation,
percentile, nearest-neighbor, and subsequence-search logic.
"""

from __future__ import annotations

import ipaddress
import math

PROTOS = ("tcp", "udp", "icmp")
STATES = ("S0", "S1", "SF", "REJ", "S2", "S3", "RSTO",
          "RSTR", "RSTOS0", "RSTRH", "SH", "SHR", "OTH")
VOLUMES = ("orig_pkts", "resp_pkts", "orig_bytes", "resp_bytes", "duration")


def _is_internal(ip: str, subnets) -> bool:
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError:
        return False
    return any(addr in ipaddress.ip_network(s, strict=False) for s in subnets)


def point_features(records, host, port, subnets) -> dict[str, float]:
    """Feature dict for one synthetic (host, port) group: port-keyed
    stats from the records matching ``port``, distinct counts over all
    ``records`` with the counterpart resolved against ``host``."""
    out: dict[str, float] = {}
    group = [r for r in records if r.resp_p == port]
    for p in PROTOS:
        out[f"proto_{p}"] = float(sum(1 for r in group if r.proto == p))
    for s in STATES:
        out[f"conn_state_{s}"] = float(sum(1 for r in group if r.conn_state == s))
    for f in VOLUMES:
        present = [getattr(r, f) for r in group if getattr(r, f) is not None]
        out[f"{f}_sum"] = float(sum(present))
        out[f"{f}_min"] = float(min(present)) if present else 0.0
        out[f"{f}_max"] = float(max(present)) if present else 0.0
    ext = set()
    ports = set()
    for r in records:
        other = r.resp_ip if r.orig_ip == host else r.orig_ip
        if not subnets or not _is_internal(other, subnets):
            ext.add(other)
        if r.proto != "icmp":
            ports.add(r.resp_p)
    out["distinct_external_ips"] = float(len(ext))
    out["distinct_resp_ports"] = float(len(ports))
    return out


def reference_aggregate(ds, window_seconds=30.0):
    """Brute-force window aggregation.

    Returns a dict keyed by (window, host, port) holding
    (feature dict, label, pair provenance indices).
    """
    pairs: dict[tuple[int, str], list[int]] = {}
    keys: set[tuple[int, str, int]] = set()
    for i, r in enumerate(ds.records):
        if _is_internal(r.orig_ip, ds.internal_subnets):
            host = r.orig_ip
        elif _is_internal(r.resp_ip, ds.internal_subnets):
            host = r.resp_ip
        else:
            continue
        w = int(r.ts // window_seconds)
        pairs.setdefault((w, host), []).append(i)
        keys.add((w, host, r.resp_p))

    result = {}
    for (w, host, port) in keys:
        idxs = pairs[(w, host)]
        records = [ds.records[i] for i in idxs]
        feats = point_features(records, host, port, ds.internal_subnets)
        group = [r for r in records if r.resp_p == port]
        label = "nontarget" if any(r.label == "nontarget" for r in group) else "target"
        result[(w, host, port)] = (feats, label, tuple(idxs))
    return result


def percentile_oracle(values, t) -> float:
    """Nearest-rank percentile via explicit sorting."""
    v = sorted(values)
    rank = max(1, math.ceil(t / 100.0 * len(v)))
    return float(v[rank - 1])


def nearest_oracle(rows, target, lo, hi):
    """Linear-scan nearest neighbor under min-max normalization; returns
    (index, distance). Ties keep the earliest row."""
    def norm(vec):
        out = []
        for v, a, b in zip(vec, lo, hi):
            out.append((v - a) / (b - a) if b > a else 0.0)
        return out

    nt = norm(target)
    best = None
    for i, row in enumerate(rows):
        nr = norm(row)
        d = math.sqrt(sum((x - y) ** 2 for x, y in zip(nr, nt)))
        if best is None or d < best[1]:
            best = (i, d)
    return best


def scan_oracle(stream_records, global_indices, host, port, subnets,
                feature_names, selected, lo, hi, target, l_max):
    """Exhaustive contiguous-subsequence search over one host stream.

    Evaluates every slice [i, i+l) with l <= l_max using
    :func:`point_features`, normalized per feature; returns
    (distance, length, first global index, records).
    """
    best = None
    n = len(stream_records)
    for start in range(n):
        for length in range(1, min(l_max, n - start) + 1):
            cand = stream_records[start:start + length]
            feats = point_features(cand, host, port, subnets)
            d2 = 0.0
            for c, f in enumerate(selected):
                span = hi[c] - lo[c]
                v = (feats[feature_names[f]] - lo[c]) / span if span > 0 else 0.0
                t = (target[c] - lo[c]) / span if span > 0 else 0.0
                d2 += (v - t) ** 2
            cand_key = (d2, length, global_indices[start])
            if best is None or cand_key < best[0]:
                best = (cand_key, cand)
    (d2, length, first), records = best
    return math.sqrt(d2), length, first, records
