import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import make_scenario, split_scenario  # noqa: E402

from flowpoison.flowlog import ConnRecord, Dataset  # noqa: E402


def rec(ts=0.0, orig_ip="10.0.0.10", resp_ip="203.0.113.1", orig_p=40000,
        resp_p=80, proto="tcp", service="http", duration=1.0, orig_bytes=400,
        resp_bytes=1200, orig_pkts=4, resp_pkts=6, conn_state="SF",
        label="target") -> ConnRecord:
    """Hand-built record with sensible defaults."""
    return ConnRecord(
        ts=ts, orig_ip=orig_ip, resp_ip=resp_ip, orig_p=orig_p, resp_p=resp_p,
        proto=proto, service=service, duration=duration, orig_bytes=orig_bytes,
        resp_bytes=resp_bytes, orig_pkts=orig_pkts, resp_pkts=resp_pkts,
        conn_state=conn_state, label=label,
    )


def tiny_dataset(records, subnets=("10.0.0.0/24",), name="tiny") -> Dataset:
    records = sorted(records, key=lambda r: r.ts)
    return Dataset(records=records, internal_subnets=tuple(subnets),
                   scenario_name=name)


def random_dataset(rng: np.random.Generator, n_records=200, n_hosts=4,
                   n_windows=6, subnets=("10.0.0.0/24",)) -> Dataset:
    """Unstructured random dataset for oracle comparisons; includes
    missing optionals, icmp rows, intra-subnet and external-only rows."""
    hosts = [f"10.0.0.{i + 1}" for i in range(n_hosts)]
    externals = [f"198.51.100.{i + 1}" for i in range(6)]
    records = []
    for _ in range(n_records):
        proto = str(rng.choice(["tcp", "tcp", "udp", "icmp"]))
        orig = str(rng.choice(hosts + externals))
        resp = str(rng.choice(hosts + externals))
        records.append(ConnRecord(
            ts=float(rng.uniform(0, n_windows * 30.0)),
            orig_ip=orig,
            resp_ip=resp,
            orig_p=int(rng.integers(0, 65536)),
            resp_p=0 if proto == "icmp" else int(rng.choice([80, 443, 53, 8080])),
            proto=proto,
            service=None if rng.random() < 0.4 else str(rng.choice(["http", "dns"])),
            duration=None if rng.random() < 0.3 else float(rng.exponential(2.0)),
            orig_bytes=None if rng.random() < 0.2 else int(rng.integers(0, 5000)),
            resp_bytes=None if rng.random() < 0.2 else int(rng.integers(0, 9000)),
            orig_pkts=int(rng.integers(0, 50)),
            resp_pkts=int(rng.integers(0, 80)),
            conn_state=str(rng.choice(["SF", "S0", "REJ", "OTH", "RSTO"])),
            label=str(rng.choice(["target", "nontarget"])),
        ))
    return tiny_dataset(records)


@pytest.fixture(scope="session")
def scenario():
    return make_scenario(seed=7, n_windows=120)


@pytest.fixture(scope="session")
def splits(scenario):
    return split_scenario(scenario)
