"""End-to-end experiment orchestration.

One experiment: train a clean model, craft a trigger from the
adversary's data slice, poison p% of the training points, retrain with
identical hyperparameters and seed, then measure the attack success rate
on trigger-injected victim windows, the clean-test F1 drift, and the
stealth metrics. Seeds run independently; the report aggregates them.
"""

from __future__ import annotations

import csv
import json
import logging
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bayesgen import fit_bayes_net, generate_trigger
from .errors import AttackError, ConfigError
from .explain import (
    QueryCounter,
    importance_proxy_tree,
    importance_random,
    importance_shapley_sampled,
    select_top_k,
)
from .featurize import (
    FEATURE_NAMES,
    BlockEncoder,
    BlockPoint,
    aggregate_windows,
    block_matrix,
    blockize,
    feature_matrix,
)
from .flowlog import (
    LABEL_NONTARGET,
    LABEL_TARGET,
    Dataset,
    LabelRule,
    SplitSpec,
    apply_labels,
    parse_conn_log,
    partition_dataset,
    read_records,
)
from .models import AutoEncoder, FeedForwardClassifier, make_classifier
from .stealth import evaluate_anomaly_detection, jensen_shannon_report
from .trigger import (
    FeatureNormalizer,
    Trigger,
    compute_assignment,
    extract_full_trigger,
    find_prototype,
    inject_test_points,
    inject_training,
    reduce_trigger,
)

logger = logging.getLogger(__name__)

TARGET_CLASS = 0  # numeric label of the target (benign) class


def f1_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """F1 of the positive (victim/nontarget) class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(((y_true == 1) & (y_pred == 1)).sum())
    fp = int(((y_true == 0) & (y_pred == 1)).sum())
    fn = int(((y_true == 1) & (y_pred == 0)).sum())
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


@dataclass
class ScenarioConfig:
    """Per-dataset configuration the operator fills from the dataset's
    documentation (the ground truth is external to the log format)."""

    conn_log: str = ""
    internal_subnets: tuple[str, ...] = ()
    infected_hosts: tuple[str, ...] = ()
    scenario_name: str = ""
    train_intervals: tuple[tuple[float, float], ...] | None = None
    train_time_fraction: float | None = 0.6
    adversary_fraction: float = 0.15
    partition_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if d.get("train_intervals"):
            d["train_intervals"] = tuple(
                (float(a), float(b)) for a, b in d["train_intervals"]
            )
        for key in ("internal_subnets", "infected_hosts"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ExperimentConfig:
    model: str = "gbdt"                    # gbdt | ffnn
    representation: str = "windows"        # windows | blocks
    strategy: str = "entropy"              # entropy | gini | shap | random
    trigger_variant: str = "full"          # full | reduced | generated
    poison_pct: float = 1.0
    percentile: float = 95.0
    k_features: int = 8
    n_test_points: int = 200
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    window_seconds: float = 30.0
    l_max: int | None = None
    stealth: bool = True
    shap_background: int = 100
    shap_eval_points: int = 30
    shap_permutations: int = 100
    block_len: int = 100
    block_trigger_len: int = 50
    bottleneck: int = 32
    hyperparams: dict = field(default_factory=dict)
    ae_hyperparams: dict = field(default_factory=dict)
    scenario: ScenarioConfig | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.poison_pct <= 100.0):
            raise ConfigError(f"poison_pct must be in [0, 100], got {self.poison_pct}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.model not in ("gbdt", "gb", "ffnn"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.representation not in ("windows", "blocks"):
            raise ConfigError(f"unknown representation {self.representation!r}")
        if self.strategy not in ("entropy", "gini", "shap", "random"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.trigger_variant not in ("full", "reduced", "generated"):
            raise ConfigError(f"unknown trigger variant {self.trigger_variant!r}")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if "scenario" in raw and raw["scenario"] is not None:
            raw["scenario"] = ScenarioConfig.from_dict(raw["scenario"])
        if "seeds" in raw:
            raw["seeds"] = tuple(raw["seeds"])
        return cls(**raw)


@dataclass
class SeedResult:
    seed: int
    asr: float | None
    f1_clean: float
    f1_poisoned: float
    delta_f1: float
    trigger_size: int
    n_poisoned: int
    pr_auc: float | None = None
    f1_detect: float | None = None
    js_average: float | None = None
    d_ref: float | None = None
    model_queries: int = 0
    warnings: tuple[str, ...] = ()


@dataclass
class ExperimentReport:
    config: dict
    version: str
    seed_results: list[SeedResult]
    failures: list[dict]
    summary: dict

    @property
    def ok(self) -> bool:
        return bool(self.seed_results)


def load_scenario(sc: ScenarioConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Ingest + label + partition a scenario into (train, test, adversary)."""
    path = Path(sc.conn_log)
    if path.suffix == ".records":
        ds = read_records(path)
        ds = Dataset(ds.records, tuple(sc.internal_subnets), sc.scenario_name)
    else:
        ds = parse_conn_log(path, sc.internal_subnets, sc.scenario_name)
    ds = apply_labels(ds, LabelRule(frozenset(sc.infected_hosts)))
    if sc.train_intervals:
        split = SplitSpec(sc.train_intervals, sc.adversary_fraction)
    else:
        split = SplitSpec.from_time_fraction(
            ds, sc.train_time_fraction or 0.6,
            adversary_fraction=sc.adversary_fraction,
        )
    return partition_dataset(ds, split, seed=sc.partition_seed)


def _rng_seed(seed: int, stage: int) -> list[int]:
    return [seed, stage]


def craft_trigger(
    cfg: ExperimentConfig,
    adv: Dataset,
    adv_points,
    seed: int,
    query=None,
) -> tuple[Trigger, int]:
    """Phases I-IV on the adversary's slice. Returns (trigger, queries)."""
    X_adv, y_adv = feature_matrix(adv_points)
    queries = 0
    if cfg.strategy in ("entropy", "gini"):
        scores = importance_proxy_tree(X_adv, y_adv, cfg.strategy)
    elif cfg.strategy == "random":
        scores = importance_random(X_adv.shape[1], seed)
    else:
        if query is None:
            raise AttackError("the shap strategy requires query access to the model")
        counter = QueryCounter(query)
        rng = np.random.default_rng(_rng_seed(seed, 3))
        target_rows = np.nonzero(y_adv == 0)[0]
        nontarget_rows = np.nonzero(y_adv == 1)[0]
        if len(target_rows) == 0 or len(nontarget_rows) == 0:
            raise AttackError("shap importance needs both classes in the adversary data")
        bg_n = min(cfg.shap_background, len(target_rows))
        ev_n = min(cfg.shap_eval_points, len(nontarget_rows))
        background = X_adv[np.sort(rng.choice(target_rows, bg_n, replace=False))]
        eval_rows = X_adv[np.sort(rng.choice(nontarget_rows, ev_n, replace=False))]
        scores = importance_shapley_sampled(
            counter, eval_rows, background, cfg.shap_permutations, seed
        )
        queries = counter.rows

    selected = select_top_k(scores, cfg.k_features)
    nontarget_points = [p for p in adv_points if p.label == LABEL_NONTARGET]
    if not nontarget_points:
        raise AttackError("adversary data holds no victim-class points")
    norm = FeatureNormalizer.from_points(nontarget_points)
    assignment = compute_assignment(nontarget_points, selected, cfg.percentile)
    proto = find_prototype(nontarget_points, assignment, norm)
    trig = extract_full_trigger(adv, proto, selected, norm, cfg.l_max)

    if cfg.trigger_variant == "reduced":
        trig = reduce_trigger(trig, proto, norm, adv.internal_subnets)
    elif cfg.trigger_variant == "generated":
        adv_target_records = [r for r in adv.records if r.label == LABEL_TARGET]
        bn = fit_bayes_net(adv_target_records)
        trig = generate_trigger(bn, proto, assignment, selected, seed, norm)
    return trig, queries


def compute_metrics(
    clean_model,
    poisoned_model,
    X_test: np.ndarray,
    y_test: np.ndarray,
    X_manifest: np.ndarray,
) -> tuple[float | None, float, float, float]:
    """(ASR, F1_clean, F1_poisoned, delta-F1).

    ASR is the fraction of manifest points the poisoned model assigns to
    the target class; both F1 values use the same clean test set."""
    f1_c = f1_score(y_test, clean_model.predict(X_test))
    f1_p = f1_score(y_test, poisoned_model.predict(X_test))
    if len(X_manifest) == 0:
        asr = None
    else:
        asr = float(np.mean(poisoned_model.predict(X_manifest) == TARGET_CLASS))
    return asr, f1_c, f1_p, abs(f1_p - f1_c)


def _run_seed_windows(
    cfg: ExperimentConfig, seed: int,
    train: Dataset, test: Dataset, adv: Dataset,
) -> SeedResult:
    ws = cfg.window_seconds
    points_train = aggregate_windows(train, ws)
    points_test = aggregate_windows(test, ws)
    points_adv = aggregate_windows(adv, ws)
    X_train, y_train = feature_matrix(points_train)
    X_test, y_test = feature_matrix(points_test)

    clean_model = make_classifier(cfg.model, seed=seed, **cfg.hyperparams)
    clean_model.fit(X_train, y_train, FEATURE_NAMES)
    clean_pred = clean_model.predict(X_test)
    eligible = [
        i for i in range(len(y_test))
        if y_test[i] == 1 and clean_pred[i] == 1
    ]

    trig, queries = craft_trigger(
        cfg, adv, points_adv, seed, query=clean_model.predict_proba
    )

    poisoned_train, manifest = inject_training(
        train, points_train, trig, cfg.poison_pct,
        _rng_seed(seed, 1), window_seconds=ws,
    )
    points_ptrain = aggregate_windows(poisoned_train, ws)
    X_ptrain, y_ptrain = feature_matrix(points_ptrain)
    poisoned_model = make_classifier(cfg.model, seed=seed, **cfg.hyperparams)
    poisoned_model.fit(X_ptrain, y_ptrain, FEATURE_NAMES)

    poisoned_test, test_manifest = inject_test_points(
        test, points_test, eligible, trig, cfg.n_test_points,
        _rng_seed(seed, 2), window_seconds=ws,
    )
    points_ptest = aggregate_windows(poisoned_test, ws)
    by_key = {p.key: i for i, p in enumerate(points_ptest)}
    X_ptest, _ = feature_matrix(points_ptest)
    manifest_rows = np.array(
        [by_key[e.key] for e in test_manifest], dtype=np.int64
    )
    X_manifest = X_ptest[manifest_rows] if len(manifest_rows) else np.zeros((0, len(FEATURE_NAMES)))

    asr, f1_c, f1_p, delta = compute_metrics(
        clean_model, poisoned_model, X_test, y_test, X_manifest
    )

    pr_auc = f1_det = js_avg = d_ref = None
    if cfg.stealth and manifest:
        train_by_key = {p.key: i for i, p in enumerate(points_ptrain)}
        poisoned_idx = [train_by_key[e.key] for e in manifest]
        pr_auc, f1_det = evaluate_anomaly_detection(
            X_ptrain, poisoned_idx, seed=_rng_seed(seed, 5),
        )
        train_target = [r for r in train.records if r.label == LABEL_TARGET]
        test_target = [r for r in test.records if r.label == LABEL_TARGET]
        js = jensen_shannon_report(
            poisoned_train.records, train.records,
            reference=(train_target, test_target),
        )
        js_avg, d_ref = js.js_average, js.d_ref

    return SeedResult(
        seed=seed, asr=asr, f1_clean=f1_c, f1_poisoned=f1_p, delta_f1=delta,
        trigger_size=len(trig), n_poisoned=len(manifest),
        pr_auc=pr_auc, f1_detect=f1_det, js_average=js_avg, d_ref=d_ref,
        model_queries=queries, warnings=trig.warnings,
    )


def _resize_trigger(trig: Trigger, size: int) -> Trigger:
    """Fix the trigger at ``size`` records for the block representation:
    the best contiguous slice when longer, cyclic repetition when shorter."""
    recs = list(trig.records)
    if len(recs) == size:
        return trig
    if len(recs) > size:
        # keep the slice with the largest trigger-bearing mass
        best_start, best_mass = 0, -1.0
        for start in range(0, len(recs) - size + 1):
            mass = sum(
                1.0 for r in recs[start:start + size]
                if r.resp_p == trig.bearing_port
            )
            if mass > best_mass:
                best_start, best_mass = start, mass
        recs = recs[best_start:best_start + size]
    else:
        base = list(recs)
        while len(recs) < size:
            recs.append(base[len(recs) % len(base)])
        recs = recs[:size]
    from dataclasses import replace as dc_replace
    return dc_replace(trig, records=tuple(recs))


def _splice_block(
    block: BlockPoint, trig: Trigger, block_len: int, rng: np.random.Generator
):
    """Insert trigger clones at a seeded offset, then truncate back to
    the ``block_len`` most recent records."""
    from dataclasses import replace as dc_replace

    offset = int(rng.integers(0, len(block.records) + 1))
    clones = tuple(
        dc_replace(r, orig_ip=block.host_ip, label=block.label)
        for r in trig.records
    )
    seq = block.records[:offset] + clones + block.records[offset:]
    return BlockPoint(
        host_ip=block.host_ip,
        records=seq[-block_len:],
        label=block.label,
        provenance=block.provenance,
    )


def _run_seed_blocks(
    cfg: ExperimentConfig, seed: int,
    train: Dataset, test: Dataset, adv: Dataset,
) -> SeedResult:
    blocks_train = blockize(train, cfg.block_len)
    blocks_test = blockize(test, cfg.block_len)
    if not blocks_train or not blocks_test:
        raise AttackError("not enough records to form blocks")

    def fit_pipeline(blocks, clf_seed):
        encoder = BlockEncoder().fit(
            r for b in blocks for r in b.records
        )
        X, y = block_matrix(blocks, encoder)
        ae = AutoEncoder(bottleneck=cfg.bottleneck, seed=clf_seed,
                         **cfg.ae_hyperparams).fit(X)
        enc = ae.encode(X)
        clf = FeedForwardClassifier(seed=clf_seed, **cfg.hyperparams).fit(enc, y)
        return encoder, ae, clf

    encoder, ae, clf = fit_pipeline(blocks_train, seed)
    X_test, y_test = block_matrix(blocks_test, encoder)
    enc_test = ae.encode(X_test)
    clean_pred = clf.predict(enc_test)
    f1_c = f1_score(y_test, clean_pred)
    eligible = [
        i for i in range(len(y_test)) if y_test[i] == 1 and clean_pred[i] == 1
    ]

    # trigger comes from the statistical-feature pipeline, then is pinned
    # to the fixed block trigger size; shap would need a window-feature
    # query surface, which the block-path victim does not expose
    points_adv = aggregate_windows(adv, cfg.window_seconds)
    trig, _ = craft_trigger(cfg, adv, points_adv, seed, query=None)
    trig = _resize_trigger(trig, cfg.block_trigger_len)

    # poison p% of target-class training blocks
    target_idx = [i for i, b in enumerate(blocks_train) if b.label == LABEL_TARGET]
    if not target_idx:
        raise AttackError("no target-class blocks to poison")
    count = int(round(cfg.poison_pct / 100.0 * len(target_idx)))
    if cfg.poison_pct > 0 and count == 0:
        count = 1
    rng = np.random.default_rng(_rng_seed(seed, 6))
    chosen = sorted(rng.choice(len(target_idx), size=count, replace=False).tolist()) \
        if count else []
    poisoned_blocks = list(blocks_train)
    for c in chosen:
        i = target_idx[c]
        poisoned_blocks[i] = _splice_block(blocks_train[i], trig, cfg.block_len, rng)

    encoder2, ae2, clf2 = fit_pipeline(poisoned_blocks, seed)
    X_test2, _ = block_matrix(blocks_test, encoder2)
    f1_p = f1_score(y_test, clf2.predict(ae2.encode(X_test2)))

    rng_t = np.random.default_rng(_rng_seed(seed, 7))
    n_points = min(cfg.n_test_points, len(eligible))
    if n_points < cfg.n_test_points:
        logger.warning("only %d eligible victim blocks (requested %d)",
                       len(eligible), cfg.n_test_points)
    chosen_t = sorted(
        rng_t.choice(len(eligible), size=n_points, replace=False).tolist()
    ) if n_points else []
    injected = [
        _splice_block(blocks_test[eligible[c]], trig, cfg.block_len, rng_t)
        for c in chosen_t
    ]
    if injected:
        X_inj, _ = block_matrix(injected, encoder2)
        asr = float(np.mean(clf2.predict(ae2.encode(X_inj)) == TARGET_CLASS))
    else:
        asr = None

    return SeedResult(
        seed=seed, asr=asr, f1_clean=f1_c, f1_poisoned=f1_p,
        delta_f1=abs(f1_p - f1_c), trigger_size=len(trig),
        n_poisoned=len(chosen), warnings=trig.warnings,
    )


def run_experiment(
    cfg: ExperimentConfig,
    datasets: tuple[Dataset, Dataset, Dataset] | None = None,
) -> ExperimentReport:
    """Run every seed independently and aggregate. A failed seed is
    recorded with its traceback; the report covers the seeds that
    completed."""
    if datasets is None:
        if cfg.scenario is None:
            raise ConfigError("either datasets or a scenario config is required")
        datasets = load_scenario(cfg.scenario)
    train, test, adv = datasets

    results: list[SeedResult] = []
    failures: list[dict] = []
    for seed in cfg.seeds:
        try:
            if cfg.representation == "windows":
                results.append(_run_seed_windows(cfg, seed, train, test, adv))
            else:
                results.append(_run_seed_blocks(cfg, seed, train, test, adv))
        except Exception as exc:  # noqa: BLE001 - seed isolation by contract
            logger.error("seed %d failed: %s", seed, exc)
            failures.append({
                "seed": seed,
                "error": str(exc),
                "traceback": traceback.format_exc(),
            })

    cfg_dict = asdict(cfg)
    return ExperimentReport(
        config=cfg_dict,
        version=__version__,
        seed_results=results,
        failures=failures,
        summary=_summarize(results),
    )


def _summarize(results: list[SeedResult]) -> dict:
    def agg(name: str) -> dict | None:
        vals = [getattr(r, name) for r in results if getattr(r, name) is not None]
        if not vals:
            return None
        arr = np.asarray(vals, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(arr)}

    return {
        name: agg(name)
        for name in ("asr", "f1_clean", "f1_poisoned", "delta_f1",
                     "trigger_size", "pr_auc", "f1_detect", "js_average", "d_ref")
    }


_CSV_COLUMNS = (
    "seed", "asr", "f1_clean", "f1_poisoned", "delta_f1", "trigger_size",
    "n_poisoned", "pr_auc", "f1_detect", "js_average", "d_ref",
    "model_queries", "warnings",
)


def emit_report(report: ExperimentReport, out_dir: str | Path,
                formats: Sequence[str] = ("json", "csv")) -> list[Path]:
    """Write report.json and the flat per-seed results.csv; re-emitting
    the same report produces byte-identical files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "json" in formats:
        path = out / "report.json"
        payload = {
            "version": report.version,
            "config": report.config,
            "summary": report.summary,
            "seeds": [asdict(r) for r in report.seed_results],
            "failures": report.failures,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        written.append(path)
    if "csv" in formats:
        path = out / "results.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            for r in report.seed_results:
                row = []
                for col in _CSV_COLUMNS:
                    v = getattr(r, col)
                    if col == "warnings":
                        v = ";".join(v)
                    row.append("" if v is None else v)
                writer.writerow(row)
        written.append(path)
    return written
