import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rec, tiny_dataset
from flowpoison.errors import ConfigError, FormatError
from flowpoison.flowlog import (
    CONN_STATES,
    ConnRecord,
    Dataset,
    LabelRule,
    SplitSpec,
    apply_labels,
    parse_conn_log,
    partition_dataset,
    read_records,
    write_records,
    write_zeek,
)

HEADER = (
    "#separator \\x09\n"
    "#fields\tts\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\tservice\t"
    "duration\torig_bytes\tresp_bytes\tconn_state\torig_pkts\tresp_pkts\n"
)


def parse(text: str) -> Dataset:
    return parse_conn_log(io.StringIO(text))


def test_parse_basic_row():
    ds = parse(HEADER + "100.5\t10.0.0.1\t4000\t1.2.3.4\t80\ttcp\thttp\t1.5\t"
               "500\t900\tSF\t4\t6\n")
    assert len(ds) == 1
    r = ds.records[0]
    assert r.proto == "tcp" and r.resp_p == 80 and r.orig_pkts == 4
    assert r.ts == 100.5 and r.service == "http" and r.conn_state == "SF"


def test_parse_unset_sentinels_map_to_absent():
    ds = parse(HEADER + "1.0\t10.0.0.1\t4000\t1.2.3.4\t80\ttcp\t-\t-\t-\t-\tS0\t1\t0\n")
    r = ds.records[0]
    assert r.service is None and r.duration is None
    assert r.orig_bytes is None and r.resp_bytes is None


def test_parse_bad_numeric_skips_row_with_line_number():
    ds = parse(HEADER + "1.0\t10.0.0.1\t4000\t1.2.3.4\t80\ttcp\t-\t-\tabc\t-\tSF\t1\t0\n"
               + "2.0\t10.0.0.1\t4000\t1.2.3.4\t80\ttcp\t-\t-\t10\t-\tSF\t1\t0\n")
    assert len(ds) == 1
    rep = ds.parse_report
    assert rep.rows_skipped == 1 and rep.rows_parsed == 1
    assert rep.errors[0][0] == 3  # header spans two lines


def test_parse_rejects_unknown_enum_values():
    ds = parse(HEADER + "1.0\t10.0.0.1\t4000\t1.2.3.4\t80\tsctp\t-\t-\t-\t-\tSF\t1\t0\n"
               + "2.0\t10.0.0.1\t4000\t1.2.3.4\t80\ttcp\t-\t-\t-\t-\tXX\t1\t0\n")
    assert len(ds) == 0
    assert ds.parse_report.rows_skipped == 2


def test_parse_missing_fields_header_is_format_error():
    with pytest.raises(FormatError):
        parse("1.0\t10.0.0.1\t4000\t1.2.3.4\t80\ttcp\t-\t-\t-\t-\tSF\t1\t0\n")


def test_parse_unknown_columns_are_permitted():
    header = ("#fields\tts\tuid\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\t"
              "proto\tservice\tduration\torig_bytes\tresp_bytes\tconn_state\t"
              "history\torig_pkts\tresp_pkts\n")
    ds = parse(header + "1.0\tCxyz\t10.0.0.1\t4000\t1.2.3.4\t80\ttcp\t-\t-\t-"
               "\t-\tSF\tShADad\t3\t2\n")
    assert len(ds) == 1 and ds.records[0].orig_pkts == 3


def test_parse_sorts_by_ts_stably():
    ds = parse(HEADER
               + "5.0\t10.0.0.1\t1\t1.2.3.4\t80\ttcp\t-\t-\t-\t-\tSF\t1\t0\n"
               + "1.0\t10.0.0.2\t2\t1.2.3.4\t80\ttcp\t-\t-\t-\t-\tSF\t1\t0\n"
               + "5.0\t10.0.0.3\t3\t1.2.3.4\t80\ttcp\t-\t-\t-\t-\tSF\t1\t0\n")
    assert [r.orig_p for r in ds.records] == [2, 1, 3]


def test_parse_icmp_port_normalized_to_zero():
    ds = parse(HEADER + "1.0\t10.0.0.1\t8\t1.2.3.4\t0\ticmp\t-\t-\t-\t-\tOTH\t1\t1\n")
    assert ds.records[0].resp_p == 0


def test_conn_record_invariants():
    with pytest.raises(ValueError):
        rec(resp_p=70000)
    with pytest.raises(ValueError):
        rec(orig_pkts=-1)
    with pytest.raises(ValueError):
        rec(duration=-0.5)
    with pytest.raises(ValueError):
        rec(conn_state="NOPE")


conn_records = st.builds(
    ConnRecord,
    ts=st.floats(min_value=0, max_value=2e9, allow_nan=False),
    orig_ip=st.sampled_from(["10.0.0.1", "10.0.0.2", "198.51.100.7"]),
    resp_ip=st.sampled_from(["1.2.3.4", "10.0.0.3", "8.8.8.8"]),
    orig_p=st.integers(0, 65535),
    resp_p=st.integers(0, 65535),
    proto=st.sampled_from(["tcp", "udp"]),
    service=st.one_of(st.none(), st.sampled_from(["http", "dns", "ssl"])),
    duration=st.one_of(st.none(), st.floats(0, 1e5, allow_nan=False)),
    orig_bytes=st.one_of(st.none(), st.integers(0, 10**9)),
    resp_bytes=st.one_of(st.none(), st.integers(0, 10**9)),
    orig_pkts=st.integers(0, 10**6),
    resp_pkts=st.integers(0, 10**6),
    conn_state=st.sampled_from(CONN_STATES),
)


@settings(max_examples=50, deadline=None)
@given(st.lists(conn_records, min_size=1, max_size=30))
def test_zeek_round_trip(records):
    ds = Dataset(records=sorted(records, key=lambda r: r.ts))
    buf = io.StringIO()
    write_zeek(ds, buf)
    back = parse_conn_log(io.StringIO(buf.getvalue()))
    assert len(back) == len(ds)
    for a, b in zip(ds.records, back.records):
        assert a == b or (a.label != b.label and
                          a == ConnRecord(**{**b.__dict__, "label": a.label}))


@settings(max_examples=50, deadline=None)
@given(st.lists(conn_records, min_size=1, max_size=30))
def test_canonical_round_trip_preserves_labels(records):
    ds = apply_labels(
        Dataset(records=sorted(records, key=lambda r: r.ts),
                internal_subnets=("10.0.0.0/24",), scenario_name="rt"),
        LabelRule(frozenset(["10.0.0.1"])),
    )
    buf = io.StringIO()
    write_records(ds, buf)
    back = read_records(io.StringIO(buf.getvalue()))
    assert back.records == ds.records
    assert back.internal_subnets == ds.internal_subnets
    assert back.scenario_name == "rt"


def test_apply_labels_rules():
    ds = tiny_dataset([
        rec(ts=0, orig_ip="10.0.0.9"),
        rec(ts=1, resp_ip="10.0.0.9"),
        rec(ts=2, orig_ip="10.0.0.1", resp_ip="8.8.8.8"),
    ])
    out = apply_labels(ds, LabelRule(frozenset(["10.0.0.9"])))
    assert [r.label for r in out.records] == ["nontarget", "nontarget", "target"]
    # empty infected set: everything is target
    out2 = apply_labels(ds, LabelRule(frozenset()))
    assert all(r.label == "target" for r in out2.records)
    # totality: nothing stays unlabeled
    assert all(r.label != "unlabeled" for r in out.records)


def test_partition_window_group_counts():
    # 1000 test-period windows at 0.15 -> exactly 150 adversary windows
    records = [rec(ts=w * 30.0 + 1.0) for w in range(1000)]
    ds = tiny_dataset(records)
    split = SplitSpec(train_intervals=((-1.0, 0.0),), adversary_fraction=0.15)
    train, test, adv = partition_dataset(ds, split, seed=3)
    assert len(train) == 0
    adv_windows = {int(r.ts // 30) for r in adv.records}
    assert len(adv_windows) == 150


def test_partition_fraction_bounds():
    with pytest.raises(ConfigError):
        SplitSpec(train_intervals=(), adversary_fraction=0.0)
    with pytest.raises(ConfigError):
        SplitSpec(train_intervals=(), adversary_fraction=1.0)


def test_partition_deterministic_and_exhaustive():
    rng = np.random.default_rng(0)
    records = [rec(ts=float(rng.uniform(0, 3000)), orig_p=i) for i in range(400)]
    ds = tiny_dataset(records)
    split = SplitSpec.from_train_end(1500.0, adversary_fraction=0.3)
    a = partition_dataset(ds, split, seed=11)
    b = partition_dataset(ds, split, seed=11)
    assert [r.orig_p for r in a[2].records] == [r.orig_p for r in b[2].records]
    # disjoint + covering partition
    all_ids = sorted(r.orig_p for part in a for r in part.records)
    assert all_ids == sorted(r.orig_p for r in ds.records)
    c = partition_dataset(ds, split, seed=12)
    assert [r.orig_p for r in c[2].records] != [r.orig_p for r in a[2].records]


def test_adversary_drawn_from_test_period():
    records = [rec(ts=float(t)) for t in range(0, 3000, 7)]
    ds = tiny_dataset(records)
    split = SplitSpec.from_train_end(1500.0, adversary_fraction=0.2)
    train, test, adv = partition_dataset(ds, split, seed=0)
    assert all(r.ts < 1500.0 for r in train.records)
    assert all(r.ts >= 1500.0 for r in test.records)
    assert all(r.ts >= 1500.0 for r in adv.records)
