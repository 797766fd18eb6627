"""Synthetic botnet scenario used across the test suite.

Benign hosts mix light browsing, heavy downloads, DNS chatter, and the
occasional failed connection; infected hosts add command-and-control
beacons and scan bursts (many half-open connections, high distinct
destination counts). The classes are separable but overlap enough that a
proxy tree needs several features, which mirrors the data the attack is
designed for.
"""

from __future__ import annotations

import numpy as np

from flowpoison.flowlog import ConnRecord, Dataset, LabelRule, apply_labels

INTERNAL_SUBNET = "10.0.0.0/24"
INFECTED = ("10.0.0.200", "10.0.0.201")
WEB_SERVERS = [f"203.0.113.{i}" for i in range(1, 9)]
CC_SERVER = "198.51.100.5"
WINDOW = 30.0


def _conn(rng, host, ts, dest, port, proto, service, state, opkts, rpkts,
          obytes, rbytes, duration) -> ConnRecord:
    return ConnRecord(
        ts=ts, orig_ip=host, resp_ip=dest,
        orig_p=int(rng.integers(1024, 65535)), resp_p=port, proto=proto,
        service=service, duration=duration, orig_bytes=obytes,
        resp_bytes=rbytes, orig_pkts=opkts, resp_pkts=rpkts, conn_state=state,
    )


def _benign_window(rng: np.random.Generator, host: str, base: float) -> list[ConnRecord]:
    records = []
    mode = rng.random()
    if mode < 0.15:
        return records  # idle window
    n = int(rng.integers(1, 6)) if mode < 0.75 else int(rng.integers(6, 18))
    for _ in range(n):
        ts = base + rng.uniform(0, WINDOW)
        roll = rng.random()
        if roll < 0.10:
            # failed or reset connection
            records.append(_conn(
                rng, host, ts, str(rng.choice(WEB_SERVERS)), 80, "tcp", None,
                str(rng.choice(["S0", "REJ", "RSTO"])),
                int(rng.integers(1, 3)), 0, None, None, None,
            ))
        elif roll < 0.30:
            pkts = int(rng.integers(1, 4))
            records.append(_conn(
                rng, host, ts, str(rng.choice(WEB_SERVERS)), 53, "udp", "dns",
                "SF", pkts, pkts,
                pkts * int(rng.integers(40, 90)), pkts * int(rng.integers(80, 300)),
                float(rng.exponential(0.05)),
            ))
        else:
            port, svc = (80, "http") if rng.random() < 0.6 else (443, "ssl")
            # a quarter of web connections are tiny (keepalives, redirects)
            pkts = int(rng.integers(1, 4)) if rng.random() < 0.25 \
                else int(rng.integers(2, 40))
            records.append(_conn(
                rng, host, ts, str(rng.choice(WEB_SERVERS)), port, "tcp", svc,
                "SF", pkts, int(pkts * rng.uniform(0.8, 2.5)),
                pkts * int(rng.integers(40, 600)),
                pkts * int(rng.integers(200, 1400)),
                float(rng.exponential(1.5)),
            ))
    return records


def _bot_window(rng: np.random.Generator, host: str, base: float) -> list[ConnRecord]:
    # an infected host is still a user's machine, but the bot dominates:
    # only occasional light user traffic
    records = []
    if rng.random() < 0.3:
        ts = base + rng.uniform(0, WINDOW)
        port, svc = (80, "http") if rng.random() < 0.6 else (443, "ssl")
        pkts = int(rng.integers(1, 4)) if rng.random() < 0.25 \
            else int(rng.integers(2, 40))
        records.append(_conn(
            rng, host, ts, str(rng.choice(WEB_SERVERS)), port, "tcp", svc,
            "SF", pkts, int(pkts * rng.uniform(0.8, 2.5)),
            pkts * int(rng.integers(40, 600)), pkts * int(rng.integers(200, 1400)),
            float(rng.exponential(1.5)),
        ))
    for _ in range(int(rng.integers(3, 9))):
        ts = base + rng.uniform(0, WINDOW)
        pkts = int(rng.integers(1, 4))
        records.append(_conn(
            rng, host, ts, CC_SERVER, 6667, "tcp", None,
            str(rng.choice(["S1", "SF", "RSTO"])),
            pkts, int(rng.integers(0, 3)),
            pkts * int(rng.integers(30, 120)), int(rng.integers(0, 80)),
            float(rng.exponential(0.2)),
        ))
    if rng.random() < 0.8:
        burst = base + rng.uniform(0, WINDOW / 2)
        for _ in range(int(rng.integers(15, 45))):
            dest = f"192.0.2.{int(rng.integers(1, 250))}"
            pkts = int(rng.integers(1, 4))
            state = str(rng.choice(["S0", "S0", "REJ", "SF"]))
            records.append(_conn(
                rng, host, burst + rng.uniform(0, WINDOW / 3), dest, 25, "tcp",
                "smtp" if state == "SF" else None, state,
                pkts, int(rng.integers(0, 3)),
                pkts * int(rng.integers(40, 160)), int(rng.integers(0, 200)),
                float(rng.exponential(0.1)),
            ))
    return records


def make_scenario(
    seed: int = 7,
    n_windows: int = 120,
    n_benign_hosts: int = 12,
    t0: float = 1_600_000_000.0,
) -> Dataset:
    """Time-ordered, labeled dataset covering ``n_windows`` windows."""
    rng = np.random.default_rng(seed)
    hosts = [f"10.0.0.{10 + i}" for i in range(n_benign_hosts)]
    records: list[ConnRecord] = []
    for w in range(n_windows):
        base = t0 + w * WINDOW
        for host in hosts:
            records.extend(_benign_window(rng, host, base))
        for bot in INFECTED:
            records.extend(_bot_window(rng, bot, base))
    records.sort(key=lambda r: r.ts)
    ds = Dataset(
        records=records,
        internal_subnets=(INTERNAL_SUBNET,),
        scenario_name=f"synth-{seed}",
    )
    return apply_labels(ds, LabelRule(frozenset(INFECTED)))


def split_scenario(ds: Dataset, train_frac: float = 0.6, adv_frac: float = 0.25,
                   seed: int = 0):
    from flowpoison.flowlog import SplitSpec, partition_dataset

    split = SplitSpec.from_time_fraction(ds, train_frac, adversary_fraction=adv_frac)
    return partition_dataset(ds, split, seed=seed)
