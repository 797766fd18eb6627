"""Connection-log data model: parsing, labeling, and partitioning.

The toolkit's canonical input is a Zeek ``conn.log`` in TSV form (tab
separator, ``#fields`` header, ``-`` for unset values). Every downstream
stage operates on :class:`Dataset`, a time-ordered list of
:class:`ConnRecord` plus the scenario's internal-subnet definition.
"""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field, fields as dc_fields, replace
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, FormatError

logger = logging.getLogger(__name__)

PROTOS = ("tcp", "udp", "icmp")

# The 13 Zeek connection states.
CONN_STATES = (
    "S0", "S1", "SF", "REJ", "S2", "S3", "RSTO",
    "RSTR", "RSTOS0", "RSTRH", "SH", "SHR", "OTH",
)

LABEL_TARGET = "target"
LABEL_NONTARGET = "nontarget"
LABEL_UNLABELED = "unlabeled"
LABELS = (LABEL_TARGET, LABEL_NONTARGET, LABEL_UNLABELED)

_PROTO_SET = frozenset(PROTOS)
_STATE_SET = frozenset(CONN_STATES)
_LABEL_SET = frozenset(LABELS)

# Zeek's unset / empty sentinels.
_SENTINELS = frozenset(("-", "(empty)"))


@dataclass(slots=True)
class ConnRecord:
    """One connection-log row.

    Numeric optionals (``service``, ``duration``, ``orig_bytes``,
    ``resp_bytes``) are ``None`` when the log carried the unset sentinel.
    Instances are treated as immutable once a :class:`Dataset` is built.
    """

    ts: float
    orig_ip: str
    resp_ip: str
    orig_p: int
    resp_p: int
    proto: str
    service: str | None
    duration: float | None
    orig_bytes: int | None
    resp_bytes: int | None
    orig_pkts: int
    resp_pkts: int
    conn_state: str
    label: str = LABEL_UNLABELED

    def __post_init__(self) -> None:
        if self.proto not in _PROTO_SET:
            raise ValueError(f"unknown proto {self.proto!r}")
        if self.conn_state not in _STATE_SET:
            raise ValueError(f"unknown conn_state {self.conn_state!r}")
        if self.label not in _LABEL_SET:
            raise ValueError(f"unknown label {self.label!r}")
        if not (0 <= self.orig_p <= 65535 and 0 <= self.resp_p <= 65535):
            raise ValueError(f"port out of range: {self.orig_p}/{self.resp_p}")
        if self.orig_pkts < 0 or self.resp_pkts < 0:
            raise ValueError("packet counts must be non-negative")
        if (self.orig_bytes is not None and self.orig_bytes < 0) or (
            self.resp_bytes is not None and self.resp_bytes < 0
        ):
            raise ValueError("byte counts must be non-negative")
        if self.duration is not None and self.duration < 0:
            raise ValueError("duration must be non-negative")


@dataclass(slots=True)
class ParseReport:
    """Row-level accounting for one parse run."""

    rows_total: int = 0
    rows_parsed: int = 0
    rows_skipped: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)


@dataclass(slots=True)
class Dataset:
    """A labeled, time-ordered connection log for one scenario.

    ``records`` are sorted by ``ts`` (stable on ties). ``internal_subnets``
    holds the scenario's CIDR blocks and must be non-empty before window
    aggregation. The dataset is immutable by convention: all operations
    that change it return a new instance.
    """

    records: list[ConnRecord]
    internal_subnets: tuple[str, ...] = ()
    scenario_name: str = ""
    parse_report: ParseReport | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ConnRecord]:
        return iter(self.records)


@dataclass(frozen=True)
class LabelRule:
    """Ground-truth labeling: any record touching an infected host is
    nontarget (malicious); everything else defaults to the target class."""

    infected_hosts: frozenset[str]

    def label_for(self, rec: ConnRecord) -> str:
        if rec.orig_ip in self.infected_hosts or rec.resp_ip in self.infected_hosts:
            return LABEL_NONTARGET
        return LABEL_TARGET


class SubnetMatcher:
    """Memoized membership test for a set of CIDR blocks.

    Distinct IP strings in capture files are few relative to row counts,
    so a per-string cache removes nearly all ``ipaddress`` overhead.
    """

    def __init__(self, subnets: Iterable[str]):
        self._nets = [ipaddress.ip_network(s, strict=False) for s in subnets]
        self._cache: dict[str, bool] = {}

    def __contains__(self, ip: str) -> bool:
        hit = self._cache.get(ip)
        if hit is None:
            try:
                addr = ipaddress.ip_address(ip)
                hit = any(addr in net for net in self._nets)
            except ValueError:
                hit = False
            self._cache[ip] = hit
        return hit


# Canonical column names and the Zeek aliases they may appear under.
_COLUMN_ALIASES = {
    "ts": "ts",
    "id.orig_h": "orig_ip",
    "orig_ip": "orig_ip",
    "id.resp_h": "resp_ip",
    "resp_ip": "resp_ip",
    "id.orig_p": "orig_p",
    "orig_p": "orig_p",
    "id.resp_p": "resp_p",
    "resp_p": "resp_p",
    "proto": "proto",
    "service": "service",
    "duration": "duration",
    "orig_bytes": "orig_bytes",
    "resp_bytes": "resp_bytes",
    "conn_state": "conn_state",
    "orig_pkts": "orig_pkts",
    "resp_pkts": "resp_pkts",
    "label": "label",
}

_REQUIRED = (
    "ts", "orig_ip", "resp_ip", "orig_p", "resp_p",
    "proto", "conn_state", "orig_pkts", "resp_pkts",
)


def _open_maybe(source: str | Path | IO[str]) -> tuple[IO[str], bool]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", errors="replace"), True
    return source, False


def parse_conn_log(
    source: str | Path | IO[str],
    internal_subnets: Sequence[str] = (),
    scenario_name: str = "",
) -> Dataset:
    """Parse Zeek conn.log TSV text into a :class:`Dataset`.

    Unknown columns are ignored. ``-`` and ``(empty)`` map to absent
    optionals. Rows with unparseable numeric fields (or out-of-domain
    enums) are skipped and counted in the parse report with their line
    number; a missing ``#fields`` header raises :class:`FormatError`.
    Rows are kept in file order, then stably sorted by timestamp.
    """
    fh, owned = _open_maybe(source)
    report = ParseReport()
    records: list[ConnRecord] = []
    columns: list[str | None] | None = None
    try:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#fields"):
                    names = line.split("\t")[1:]
                    columns = [_COLUMN_ALIASES.get(n) for n in names]
                    seen = [c for c in columns if c is not None]
                    missing = [c for c in _REQUIRED if c not in seen]
                    if missing:
                        raise FormatError(
                            f"#fields header lacks required columns: {missing}"
                        )
                continue
            if columns is None:
                raise FormatError("no #fields header before first data row")
            report.rows_total += 1
            try:
                records.append(_parse_row(line, columns))
            except ValueError as exc:
                report.rows_skipped += 1
                report.errors.append((line_no, str(exc)))
                continue
            report.rows_parsed += 1
    finally:
        if owned:
            fh.close()
    if columns is None:
        raise FormatError("no #fields header found")
    records.sort(key=lambda r: r.ts)
    logger.info(
        "parsed %d rows (%d skipped) from %s",
        report.rows_parsed, report.rows_skipped, scenario_name or "<stream>",
    )
    return Dataset(
        records=records,
        internal_subnets=tuple(internal_subnets),
        scenario_name=scenario_name,
        parse_report=report,
    )


def _parse_row(line: str, columns: list[str | None]) -> ConnRecord:
    values = line.split("\t")
    row: dict[str, str] = {}
    for name, value in zip(columns, values):
        if name is not None:
            row[name] = value

    def opt_float(key: str) -> float | None:
        v = row.get(key)
        if v is None or v in _SENTINELS:
            return None
        return float(v)

    def opt_int(key: str) -> int | None:
        v = row.get(key)
        if v is None or v in _SENTINELS:
            return None
        return int(v)

    def req_int(key: str, default: int = 0) -> int:
        v = row.get(key)
        if v is None or v in _SENTINELS:
            return default
        return int(v)

    ts_raw = row.get("ts")
    if ts_raw is None or ts_raw in _SENTINELS:
        raise ValueError("missing ts")
    proto = row.get("proto", "-").lower()
    service = row.get("service")
    if service in _SENTINELS:
        service = None
    label = row.get("label")
    if label is None or label in _SENTINELS:
        label = LABEL_UNLABELED
    # ICMP carries type/code in the port columns; the responder port is
    # normalized to 0 so the aggregation key stays total.
    resp_p = 0 if proto == "icmp" else req_int("resp_p")
    return ConnRecord(
        ts=float(ts_raw),
        orig_ip=row.get("orig_ip", ""),
        resp_ip=row.get("resp_ip", ""),
        orig_p=req_int("orig_p"),
        resp_p=resp_p,
        proto=proto,
        service=service,
        duration=opt_float("duration"),
        orig_bytes=opt_int("orig_bytes"),
        resp_bytes=opt_int("resp_bytes"),
        orig_pkts=req_int("orig_pkts"),
        resp_pkts=req_int("resp_pkts"),
        conn_state=row.get("conn_state", ""),
        label=label,
    )


_ZEEK_FIELDS = (
    "ts", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "proto",
    "service", "duration", "orig_bytes", "resp_bytes", "conn_state",
    "orig_pkts", "resp_pkts",
)
_ZEEK_TYPES = (
    "time", "addr", "port", "addr", "port", "enum",
    "string", "interval", "count", "count", "string",
    "count", "count",
)


def _fmt(value: object) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_zeek(ds: Dataset, dest: str | Path | IO[str]) -> None:
    """Serialize back to Zeek conn.log TSV (labels are not part of the
    Zeek format; use :func:`write_records` to persist them)."""
    fh, owned = _open_maybe_write(dest)
    try:
        fh.write("#separator \\x09\n")
        fh.write("#empty_field\t(empty)\n")
        fh.write("#unset_field\t-\n")
        fh.write("#path\tconn\n")
        fh.write("#fields\t" + "\t".join(_ZEEK_FIELDS) + "\n")
        fh.write("#types\t" + "\t".join(_ZEEK_TYPES) + "\n")
        for r in ds.records:
            fh.write(
                "\t".join((
                    repr(r.ts), r.orig_ip, str(r.orig_p), r.resp_ip,
                    str(r.resp_p), r.proto, _fmt(r.service), _fmt(r.duration),
                    _fmt(r.orig_bytes), _fmt(r.resp_bytes), r.conn_state,
                    str(r.orig_pkts), str(r.resp_pkts),
                )) + "\n"
            )
    finally:
        if owned:
            fh.close()


def _open_maybe_write(dest: str | Path | IO[str]) -> tuple[IO[str], bool]:
    if isinstance(dest, (str, Path)):
        return open(dest, "w", encoding="utf-8"), True
    return dest, False


_CANONICAL_MAGIC = "#flowpoison-records\tv1"
_CANONICAL_FIELDS = tuple(f.name for f in dc_fields(ConnRecord))


def write_records(ds: Dataset, dest: str | Path | IO[str]) -> None:
    """Write the canonical columnar dump (versioned header, TSV body,
    label column included) used for cache reuse between pipeline stages."""
    fh, owned = _open_maybe_write(dest)
    try:
        fh.write(_CANONICAL_MAGIC + "\n")
        fh.write("#scenario\t" + ds.scenario_name + "\n")
        fh.write("#subnets\t" + ",".join(ds.internal_subnets) + "\n")
        fh.write("#fields\t" + "\t".join(_CANONICAL_FIELDS) + "\n")
        for r in ds.records:
            fh.write(
                "\t".join(_fmt(getattr(r, name)) for name in _CANONICAL_FIELDS)
                + "\n"
            )
    finally:
        if owned:
            fh.close()


def read_records(source: str | Path | IO[str]) -> Dataset:
    """Read a canonical dump produced by :func:`write_records`."""
    fh, owned = _open_maybe(source)
    try:
        header = fh.readline().rstrip("\n")
        if header != _CANONICAL_MAGIC:
            raise FormatError(f"not a flowpoison records file: {header!r}")
        scenario = ""
        subnets: tuple[str, ...] = ()
        line = fh.readline().rstrip("\n")
        while line.startswith("#"):
            tag, _, rest = line.partition("\t")
            if tag == "#scenario":
                scenario = rest
            elif tag == "#subnets":
                subnets = tuple(s for s in rest.split(",") if s)
            elif tag == "#fields":
                if tuple(rest.split("\t")) != _CANONICAL_FIELDS:
                    raise FormatError("canonical field list mismatch")
                break
            line = fh.readline().rstrip("\n")
        records = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            v = line.split("\t")
            records.append(ConnRecord(
                ts=float(v[0]), orig_ip=v[1], resp_ip=v[2],
                orig_p=int(v[3]), resp_p=int(v[4]), proto=v[5],
                service=None if v[6] == "-" else v[6],
                duration=None if v[7] == "-" else float(v[7]),
                orig_bytes=None if v[8] == "-" else int(v[8]),
                resp_bytes=None if v[9] == "-" else int(v[9]),
                orig_pkts=int(v[10]), resp_pkts=int(v[11]),
                conn_state=v[12], label=v[13],
            ))
    finally:
        if owned:
            fh.close()
    return Dataset(records=records, internal_subnets=subnets, scenario_name=scenario)


def apply_labels(ds: Dataset, rule: LabelRule) -> Dataset:
    """Return a dataset in which every record carries a class label."""
    records = [replace(r, label=rule.label_for(r)) for r in ds.records]
    return Dataset(
        records=records,
        internal_subnets=ds.internal_subnets,
        scenario_name=ds.scenario_name,
        parse_report=ds.parse_report,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Names the capture periods for training and testing.

    A record belongs to the training split iff its timestamp falls inside
    any ``train_intervals`` half-open ``[start, end)`` range; everything
    else is test-period data. The adversary's dataset is a seeded sample
    of ``adversary_fraction`` of the test period's 30-second window
    groups, so whole windows stay together.
    """

    train_intervals: tuple[tuple[float, float], ...]
    adversary_fraction: float = 0.15
    window_seconds: float = 30.0

    def __post_init__(self) -> None:
        if not (0.0 < self.adversary_fraction < 1.0):
            raise ConfigError(
                f"adversary_fraction must lie in (0, 1), got {self.adversary_fraction}"
            )
        if self.window_seconds <= 0:
            raise ConfigError("window_seconds must be positive")

    @classmethod
    def from_train_end(cls, train_end: float, **kwargs) -> "SplitSpec":
        return cls(train_intervals=((float("-inf"), train_end),), **kwargs)

    @classmethod
    def from_time_fraction(cls, ds: Dataset, train_fraction: float, **kwargs) -> "SplitSpec":
        """Place the train/test boundary at a fraction of the time span."""
        if not ds.records:
            raise ConfigError("cannot derive a split from an empty dataset")
        t0, t1 = ds.records[0].ts, ds.records[-1].ts
        return cls.from_train_end(t0 + train_fraction * (t1 - t0), **kwargs)

    def is_train(self, ts: float) -> bool:
        return any(lo <= ts < hi for lo, hi in self.train_intervals)


def partition_dataset(
    ds: Dataset, split: SplitSpec, seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into (train, test, adversary) datasets.

    Every record lands in exactly one part. The adversary set is drawn
    from the test period at window-group granularity, deterministically
    for a given seed.
    """
    train_recs: list[ConnRecord] = []
    test_pool: list[ConnRecord] = []
    for r in ds.records:
        (train_recs if split.is_train(r.ts) else test_pool).append(r)

    windows = sorted({int(r.ts // split.window_seconds) for r in test_pool})
    n_adv = int(round(split.adversary_fraction * len(windows)))
    rng = np.random.default_rng(seed)
    adv_windows = set()
    if windows and n_adv > 0:
        chosen = rng.choice(len(windows), size=n_adv, replace=False)
        adv_windows = {windows[i] for i in chosen}

    test_recs: list[ConnRecord] = []
    adv_recs: list[ConnRecord] = []
    for r in test_pool:
        w = int(r.ts // split.window_seconds)
        (adv_recs if w in adv_windows else test_recs).append(r)

    def mk(recs: list[ConnRecord], tag: str) -> Dataset:
        name = f"{ds.scenario_name}:{tag}" if ds.scenario_name else tag
        return Dataset(records=recs, internal_subnets=ds.internal_subnets,
                       scenario_name=name)

    return mk(train_recs, "train"), mk(test_recs, "test"), mk(adv_recs, "adv")
