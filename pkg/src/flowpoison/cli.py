"""Command-line entry points for the pipeline stages."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np


def _cmd_ingest(args: argparse.Namespace) -> int:
    from .flowlog import LabelRule, apply_labels, parse_conn_log, write_records

    labels = json.loads(Path(args.labels).read_text()) if args.labels else {}
    ds = parse_conn_log(
        args.conn_log,
        internal_subnets=labels.get("internal_subnets", []),
        scenario_name=labels.get("scenario_name", Path(args.conn_log).stem),
    )
    ds = apply_labels(ds, LabelRule(frozenset(labels.get("infected_hosts", []))))
    write_records(ds, args.out)
    rep = ds.parse_report
    print(f"ingested {rep.rows_parsed} records ({rep.rows_skipped} rows skipped) "
          f"-> {args.out}")
    return 0


def _cmd_featurize(args: argparse.Namespace) -> int:
    from .featurize import aggregate_windows, blockize, write_feature_matrix
    from .flowlog import read_records

    ds = read_records(args.infile)
    if args.mode == "windows":
        points = aggregate_windows(ds, args.window_seconds)
        write_feature_matrix(points, args.out)
        print(f"wrote {len(points)} window feature points -> {args.out}")
    else:
        blocks = blockize(ds, args.block_len)
        print(f"{len(blocks)} blocks of {args.block_len} records "
              f"(run `train --model ae` to encode them)")
    return 0


def _load_features(path: str) -> tuple[np.ndarray, np.ndarray]:
    from .featurize import N_FEATURES

    rows, labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            labels.append(1 if parts[3] == "nontarget" else 0)
            rows.append([float(v) for v in parts[4:4 + N_FEATURES]])
    return np.asarray(rows), np.asarray(labels, dtype=np.int64)


def _cmd_train(args: argparse.Namespace) -> int:
    from .models import AutoEncoder, make_classifier, save_model

    X, y = _load_features(args.features)
    if args.model == "ae":
        model = AutoEncoder(seed=args.seed).fit(X)
    else:
        model = make_classifier(args.model, seed=args.seed).fit(X, y)
    save_model(model, args.out)
    print(f"trained {args.model} on {len(X)} points -> {args.out}")
    return 0


def _cmd_explain(args: argparse.Namespace) -> int:
    from .explain import (
        importance_proxy_tree,
        importance_random,
        importance_shapley_sampled,
        select_top_k,
    )
    from .featurize import FEATURE_NAMES
    from .models import load_model

    X, y = _load_features(args.adv)
    if args.strategy in ("entropy", "gini"):
        scores = importance_proxy_tree(X, y, args.strategy)
    elif args.strategy == "random":
        scores = importance_random(X.shape[1], args.seed)
    else:
        if not args.model:
            print("--model is required for the shap strategy", file=sys.stderr)
            return 2
        model = load_model(args.model)
        background = X[y == 0][: args.background]
        scores = importance_shapley_sampled(
            model.predict_proba, X[y == 1][: args.points], background,
            args.permutations, args.seed,
        )
    top = select_top_k(scores, args.k)
    payload = {
        "strategy": scores.strategy,
        "scores": {n: float(s) for n, s in zip(FEATURE_NAMES, scores.scores)},
        "top_k": [FEATURE_NAMES[i] for i in top],
    }
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"top-{args.k} features: {', '.join(payload['top_k'])}")
    return 0


def _cmd_bayesgen_fit(args: argparse.Namespace) -> int:
    from .bayesgen import fit_bayes_net, save_bayes_net
    from .flowlog import LABEL_TARGET, read_records

    ds = read_records(args.adv)
    records = [r for r in ds.records if r.label == LABEL_TARGET]
    bn = fit_bayes_net(records)
    save_bayes_net(bn, args.out)
    print(f"fit generative model on {bn.n_records} target-class records -> {args.out}")
    return 0


def _cmd_bayesgen_sample(args: argparse.Namespace) -> int:
    from .bayesgen import load_bayes_net, sample_connection
    from .flowlog import Dataset, write_zeek

    bn = load_bayes_net(args.bn)
    fixed: dict[str, object] = {}
    if args.fixed:
        for part in args.fixed.split(","):
            key, _, value = part.partition("=")
            fixed[key.strip()] = int(value) if value.strip().isdigit() else value.strip()
    rng = np.random.default_rng(args.seed)
    records = [sample_connection(bn, fixed, rng) for _ in range(args.n)]
    write_zeek(Dataset(records), args.out or sys.stdout)
    if args.out:
        print(f"sampled {len(records)} connections -> {args.out}")
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    from .harness import ExperimentConfig, ScenarioConfig, emit_report, run_experiment

    scenario = ScenarioConfig.from_dict(json.loads(Path(args.scenario).read_text()))
    cfg = ExperimentConfig(
        model=args.model,
        strategy=args.strategy,
        trigger_variant=args.trigger,
        poison_pct=args.poison_pct,
        seeds=tuple(args.seed),
        scenario=scenario,
    )
    report = run_experiment(cfg)
    emit_report(report, args.out)
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    return 0 if report.ok else 1


def _cmd_stealth(args: argparse.Namespace) -> int:
    from .flowlog import read_records
    from .stealth import jensen_shannon_report

    poisoned = read_records(args.poisoned)
    clean = read_records(args.clean)
    report = jensen_shannon_report(poisoned.records, clean.records)
    payload = {
        "js_per_field": report.js_per_field,
        "js_average": report.js_average,
    }
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"average JS distance: {report.js_average:.4f}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    from .harness import ExperimentConfig, emit_report, run_experiment

    cfg = ExperimentConfig.from_json(args.config)
    report = run_experiment(cfg)
    emit_report(report, args.out)
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowpoison",
        description="Clean-label backdoor poisoning toolkit for flow classifiers",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a Zeek conn.log into canonical records")
    p.add_argument("--conn-log", required=True)
    p.add_argument("--labels", help="scenario JSON (subnets, infected hosts)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("featurize", help="build feature representations")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--mode", choices=("windows", "blocks"), default="windows")
    p.add_argument("--window-seconds", type=float, default=30.0)
    p.add_argument("--block-len", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_featurize)

    p = sub.add_parser("train", help="train a model on persisted features")
    p.add_argument("--model", choices=("gb", "gbdt", "ffnn", "ae"), default="gbdt")
    p.add_argument("--features", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("explain", help="rank features by importance")
    p.add_argument("--strategy", choices=("entropy", "gini", "shap", "random"),
                   default="entropy")
    p.add_argument("--adv", required=True, help="adversary feature file")
    p.add_argument("--model", help="saved model (shap only)")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--permutations", type=int, default=100)
    p.add_argument("--background", type=int, default=100)
    p.add_argument("--points", type=int, default=30)
    p.add_argument("--out", default="scores.json")
    p.set_defaults(fn=_cmd_explain)

    p = sub.add_parser("attack", help="run a poisoning attack end to end")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--model", default="gbdt")
    p.add_argument("--strategy", default="entropy")
    p.add_argument("--trigger", choices=("full", "reduced", "generated"),
                   default="full")
    p.add_argument("--poison-pct", type=float, default=1.0)
    p.add_argument("--seed", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--out", default="attack-out")
    p.set_defaults(fn=_cmd_attack)

    p = sub.add_parser("bayesgen", help="generative model commands")
    bsub = p.add_subparsers(dest="bayes_command", required=True)
    pf = bsub.add_parser("fit", help="fit the Bayes net on adversary records")
    pf.add_argument("--adv", required=True, help="canonical records file")
    pf.add_argument("--out", default="bn.json")
    pf.set_defaults(fn=_cmd_bayesgen_fit)
    ps = bsub.add_parser("sample", help="sample connections from a fitted net")
    ps.add_argument("--bn", required=True)
    ps.add_argument("--fixed", help="comma list, e.g. proto=tcp,resp_p=80")
    ps.add_argument("-n", type=int, default=10)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out")
    ps.set_defaults(fn=_cmd_bayesgen_sample)

    p = sub.add_parser("stealth", help="problem-space distribution distance")
    p.add_argument("--poisoned", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--out", default="stealth.json")
    p.set_defaults(fn=_cmd_stealth)

    p = sub.add_parser("run", help="run experiments from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="run-out")
    p.set_defaults(fn=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
