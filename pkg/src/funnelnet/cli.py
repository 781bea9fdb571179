"""Command-line entry point tying the pipeline together.

Subcommands: generate-data, train, eval, grad-check, simulate-coupons,
compare. Every run resolves its configuration (JSON config file plus flag
overrides) and writes a manifest next to its outputs, so any run can be
reproduced from the manifest alone. Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .data import (
    GeneratorConfig, generate_split, read_dataset, stack_records,
    write_dataset,
)
from .errors import FunnelNetError
from .gradcheck import DEFAULT_SEEDS, run_component_checks
from .metrics import (
    collect_scores, evaluate_model, policy_metrics, simulate_allocation,
)
from .model import ModelConfig, TASKS
from .training import (
    TrainConfig, config_hash, load_model_from_checkpoint, train,
)


def _tupled(d):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def load_run_config(path, seed=None):
    """Resolve (GeneratorConfig, TrainConfig) from a JSON file plus overrides."""
    obj = {}
    if path is not None:
        with open(path) as fh:
            obj = json.load(fh)
    gen = GeneratorConfig(**_tupled(obj.get("generator", {})))
    model = ModelConfig(**_tupled(obj.get("model", {})))
    train_kwargs = dict(obj.get("train", {}))
    train_kwargs.pop("model", None)
    tc = TrainConfig(model=model, **train_kwargs)
    if seed is not None:
        tc = replace(tc, seed=seed)
    return gen, tc


def write_manifest(out_dir, command, gen_config, train_config, seed, outputs):
    os.makedirs(out_dir, exist_ok=True)
    configs = {"train": asdict(train_config), "generator": asdict(gen_config)}
    manifest = {
        "command": command,
        "config": configs,
        "config_hash": config_hash(configs),
        "seed": seed,
        "version": __version__,
        "outputs": sorted(outputs),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_generate_data(args):
    gen, tc = load_run_config(args.config)
    seed = args.seed if args.seed is not None else tc.seed
    os.makedirs(args.out, exist_ok=True)
    train_recs, test_recs = generate_split(gen, seed=seed)
    write_dataset(train_recs, os.path.join(args.out, "train.jsonl"))
    write_dataset(test_recs, os.path.join(args.out, "test.jsonl"))
    write_manifest(args.out, "generate-data", gen, tc, seed,
                   ["train.jsonl", "test.jsonl"])
    print(f"wrote {len(train_recs)} train / {len(test_recs)} test records to {args.out}")
    return 0


def _load_records(data_dir, name):
    path = os.path.join(data_dir, name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset not found: {path}")
    return read_dataset(path)


def cmd_train(args):
    gen, tc = load_run_config(args.config, seed=args.seed)
    records = _load_records(args.data, "train.jsonl")
    result = train(tc, records, gen, out_dir=args.out)
    write_manifest(args.out, "train", gen, tc, tc.seed,
                   ["checkpoint.npz", "history.csv"])
    last = result.history[-1] if result.history else {}
    print(f"trained variant={tc.variant} epochs={tc.epochs} "
          f"final_total={last.get('total', float('nan')):.5f} -> {args.out}")
    return 0


def _format_table(reports):
    task_order = ("purchase", "browse", "cart", "collect")
    lines = []
    header = f"{'method':<12}" + "".join(
        f"{t + ' AUC':>14}{t + ' F1':>13}" for t in task_order)
    lines.append(header)
    for variant, report in reports.items():
        row = f"{variant:<12}"
        for t in task_order:
            stats = report.classification[t]
            row += f"{stats['auc']:>14.5f}{stats['f1']:>13.5f}"
        lines.append(row)
    lines.append("")
    lines.append(f"{'method':<12}{'MAE':>14}{'MAPE':>13}{'WMAPE':>13}")
    for variant, report in reports.items():
        r = report.regression
        lines.append(f"{variant:<12}{r.mae:>14.5f}{r.mape:>13.5f}{r.wmape:>13.5f}")
    return "\n".join(lines)


def _report_rows(reports):
    rows = []
    for variant, report in reports.items():
        rows.extend(report.csv_rows(variant))
    return rows


def cmd_eval(args):
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model, _, tc, gen, _ = load_model_from_checkpoint(args.checkpoint)
    records = _load_records(args.data, "test.jsonl")
    report = evaluate_model(model, stack_records(records), threshold=args.threshold)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "metrics.csv"),
               ["variant", "task", "metric", "value"],
               _report_rows({tc.variant: report}))
    write_manifest(args.out, "eval", gen, tc, tc.seed, ["metrics.csv"])
    print(_format_table({tc.variant: report}))
    return 0


def cmd_grad_check(args):
    seeds = DEFAULT_SEEDS if args.seed is None else (args.seed,)
    results = run_component_checks(seeds=seeds)
    rows = []
    failed = False
    for name in sorted(results):
        r = results[name]
        status = "ok" if r.passed else "FAIL"
        failed = failed or not r.passed
        print(f"{name:32s} max_rel_err={r.error:.3e} tol={r.tolerance:.0e} {status}")
        rows.append([name, repr(r.error), repr(r.tolerance), status])
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "grad_check.csv"),
                   ["component", "max_rel_err", "tolerance", "status"], rows)
        gen, tc = load_run_config(None)
        write_manifest(args.out, "grad-check", gen, tc,
                       args.seed if args.seed is not None else DEFAULT_SEEDS[0],
                       ["grad_check.csv"])
    return 1 if failed else 0


def cmd_simulate_coupons(args):
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model, _, tc, gen, _ = load_model_from_checkpoint(args.checkpoint)
    ds = stack_records(_load_records(args.data, "test.jsonl"))
    scores = collect_scores(model, ds)["p_purchase"]
    strategies = (args.strategy,) if args.strategy else ("random", "model")
    rows = []
    for strategy in strategies:
        events = simulate_allocation(
            scores, ds.y_purchase, ds.order_volume, strategy,
            budget_frac=args.budget, seed=tc.seed)
        m = policy_metrics(events)

        def maybe(metric):
            try:
                return repr(getattr(m, metric))
            except FunnelNetError:
                return "undefined"

        rows.append([strategy, m.received, m.verified, repr(m.verified_amount),
                     repr(m.order_volume), repr(m.transaction_amount),
                     maybe("verification_rate"), maybe("cost_per_order"),
                     maybe("roi")])
        print(f"{strategy}: verification_rate={rows[-1][6]} "
              f"cost_per_order={rows[-1][7]} roi={rows[-1][8]}")
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "policy.csv"),
               ["strategy", "received", "verified", "verified_amount",
                "order_volume", "transaction_amount", "verification_rate",
                "cost_per_order", "roi"], rows)
    write_manifest(args.out, "simulate-coupons", gen, tc, tc.seed, ["policy.csv"])
    return 0


def cmd_compare(args):
    gen, tc = load_run_config(args.config, seed=args.seed)
    if args.data is not None:
        train_recs = _load_records(args.data, "train.jsonl")
        test_recs = _load_records(args.data, "test.jsonl")
    else:
        train_recs, test_recs = generate_split(gen, seed=tc.seed)
    test_ds = stack_records(test_recs)
    reports = {}
    for variant in ("lr", "mtl-equal", "full"):
        result = train(replace(tc, variant=variant), train_recs, gen)
        reports[variant] = evaluate_model(result.model, test_ds)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "comparison.csv"),
               ["variant", "task", "metric", "value"], _report_rows(reports))
    write_manifest(args.out, "compare", gen, tc, tc.seed, ["comparison.csv"])
    print(_format_table(reports))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="funnelnet",
        description="Multi-task purchase-funnel intent model pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", default=None, help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("generate-data", help="write synthetic train/test datasets")
    common(p, "runs/data")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model variant")
    common(p, "runs/train")
    p.add_argument("--data", default="runs/data", help="dataset directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test set")
    common(p, "runs/eval")
    p.add_argument("--checkpoint", default="runs/train/checkpoint.npz")
    p.add_argument("--data", default="runs/data")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="classification threshold for F1")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of every component")
    p.add_argument("--seed", type=int, default=None,
                   help="run a single instance seed instead of the default five")
    p.add_argument("--out", default=None, help="optional report directory")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("simulate-coupons", help="policy metrics for coupon strategies")
    common(p, "runs/coupons")
    p.add_argument("--checkpoint", default="runs/train/checkpoint.npz")
    p.add_argument("--data", default="runs/data")
    p.add_argument("--strategy", choices=("random", "model"), default=None,
                   help="limit the simulation to one strategy")
    p.add_argument("--budget", type=float, default=0.3,
                   help="fraction of users receiving a coupon")
    p.set_defaults(func=cmd_simulate_coupons)

    p = sub.add_parser("compare", help="side-by-side lr / mtl-equal / full table")
    common(p, "runs/compare")
    p.add_argument("--data", default=None, help="dataset directory (else generated)")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FunnelNetError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
