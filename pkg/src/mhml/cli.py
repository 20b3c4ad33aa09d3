"""Command-line entry point.

Subcommands: gen-data, train, eval, gradcheck, suite, report. Settings are
resolved as built-in defaults < ``MHML_SEED`` (seed only) < ``--config``
file < command-line flags. Exit codes: 0 success, 1 failed check or I/O
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .bench import (
    METHODS,
    Dataset,
    MethodConfig,
    SuiteConfig,
    gen_gaussian_mixture,
    render_table,
    run_suite,
    train_method,
)
from .io import (
    load_checkpoint,
    read_dataset_csv,
    read_predictions_csv,
    save_checkpoint,
    splits_path,
    write_dataset_csv,
)
from .metrics import DEFAULT_N_BINS, CalibrationReport, calibration_report

log = logging.getLogger("mhml")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _add_common(p, *names):
    opts = {
        "config": dict(help="JSON config file (suite-config schema)"),
        "seed": dict(type=int, help="master seed; overrides every other seed source"),
        "out": dict(help="output path"),
        "bins": dict(type=int, help=f"number of ECE bins (default {DEFAULT_N_BINS})"),
        "trials": dict(type=int, default=100, help="randomized trials per harness"),
        "tol": dict(type=float, default=1e-6, help="relative tolerance"),
        "jobs": dict(type=int, default=1, help="parallel worker processes"),
        "k": dict(type=int, help="number of classes"),
        "dim": dict(type=int, help="feature dimension"),
        "heads": dict(type=int, help="head count for multi-head methods"),
        "method": dict(help=f"method kind(s), comma separated: {','.join(METHODS)}"),
        "epochs": dict(type=int, help="training epochs"),
        "lr": dict(type=float, help="learning rate"),
    }
    for name in names:
        p.add_argument(f"--{name}", **opts[name])


def _add_percent(p):
    p.add_argument("--percent", action=argparse.BooleanOptionalAction, default=True,
                   help="display ECE/NLL (and accuracy) multiplied by 100")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhml", description="Multi-head multi-loss calibration lab")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write a synthetic Gaussian-mixture dataset CSV")
    _add_common(p, "config", "seed", "out", "k", "dim")

    p = sub.add_parser("train", help="train one method; write checkpoint and report")
    _add_common(p, "config", "seed", "out", "bins", "k", "dim", "heads", "method", "epochs", "lr")
    p.add_argument("--data", help="dataset CSV (generated from the config when omitted)")
    _add_percent(p)

    p = sub.add_parser("eval", help="score a predictions CSV or a checkpoint")
    _add_common(p, "out", "bins")
    p.add_argument("--preds", help="predictions CSV (p0..p{K-1},label)")
    p.add_argument("--checkpoint", help="checkpoint written by 'train'")
    p.add_argument("--data", help="dataset CSV to score the checkpoint on")
    _add_percent(p)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the head gradients")
    _add_common(p, "seed", "trials", "tol")

    p = sub.add_parser("suite", help="run the full method roster over several seeds")
    _add_common(p, "config", "seed", "out", "bins", "jobs", "k", "dim", "heads", "method", "epochs", "lr")
    _add_percent(p)

    p = sub.add_parser("report", help="re-render an existing result document")
    p.add_argument("result", help="result JSON written by 'suite'")
    _add_common(p, "out")
    _add_percent(p)
    return parser


def resolve_config(args) -> SuiteConfig:
    """Defaults < MHML_SEED < config file < flags."""
    d = SuiteConfig().to_dict()
    d["data"]["priors"] = None
    env_seed = os.environ.get("MHML_SEED")
    if env_seed is not None:
        try:
            d["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"MHML_SEED must be an integer, got {env_seed!r}") from None
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        for key, val in user.items():
            if key in ("data", "train") and isinstance(val, dict):
                d[key].update(val)
            else:
                d[key] = val
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "k", None) is not None:
        d["data"]["n_classes"] = args.k
        if d["data"].get("priors") is not None and len(d["data"]["priors"]) != args.k:
            d["data"]["priors"] = None
    if getattr(args, "dim", None) is not None:
        d["data"]["dim"] = args.dim
    if getattr(args, "epochs", None) is not None:
        d["train"]["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        d["train"]["lr"] = args.lr
    if getattr(args, "heads", None) is not None:
        d["train"]["n_heads"] = args.heads
    if getattr(args, "bins", None) is not None:
        d["n_bins"] = args.bins
    if getattr(args, "method", None):
        d["methods"] = [m.strip() for m in args.method.split(",") if m.strip()]
    try:
        return SuiteConfig.from_dict(d).resolved()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _echo_config(cfg: SuiteConfig):
    print("resolved config: " + json.dumps(cfg.to_dict(), sort_keys=True), file=sys.stderr)


def _fmt_report(r: CalibrationReport, percent: bool) -> str:
    s = 100.0 if percent else 1.0
    head = f"{'Method':<10} {'N':>7} {'ACC':>8} {'ECE':>8} {'NLL':>8} {'Brier':>8}"
    row = (f"{(r.method or '-'):<10} {r.n_samples:>7d} {r.accuracy * s:>8.2f} {r.ece * s:>8.2f} "
           f"{r.nll * s:>8.2f} {r.brier:>8.4f}")
    return f"{head}\n{'-' * len(head)}\n{row}"


def _write_reliability_csv(path, report: CalibrationReport):
    lines = ["lo,hi,count,acc,conf"]
    lines += [f"{b.lo!r},{b.hi!r},{b.count},{b.acc!r},{b.conf!r}" for b in report.bins]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_dataset(path) -> Dataset:
    X, y = read_dataset_csv(path)
    side = splits_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        n_tr, n_va, n_te = meta["n_train"], meta["n_val"], meta["n_test"]
        if n_tr + n_va + n_te != len(y):
            raise ValueError(f"{side}: split sizes do not add up to the {len(y)} rows of {path}")
    else:
        # external data without split info: last 20% is validation, reused as test
        n_va = len(y) // 5
        n_tr, n_te = len(y) - n_va, n_va
        X = np.concatenate([X, X[n_tr:]])
        y = np.concatenate([y, y[n_tr:]])
    return Dataset(X, y, n_tr, n_va, n_te)


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    _echo_config(cfg)
    if not args.out:
        raise UsageError("gen-data needs --out")
    ds = gen_gaussian_mixture(cfg.data)
    write_dataset_csv(args.out, ds.X, ds.y)
    meta = {"n_train": ds.n_train, "n_val": ds.n_val, "n_test": ds.n_test, "spec": asdict(cfg.data),
            "seed": cfg.seed}
    splits_path(args.out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(ds.y)} rows ({ds.n_train}/{ds.n_val}/{ds.n_test}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.method is None:
        args.method = "4HML"
    cfg = resolve_config(args)
    _echo_config(cfg)
    if len(cfg.methods) != 1:
        raise UsageError("train takes exactly one --method")
    ds = _load_dataset(args.data) if args.data else gen_gaussian_mixture(cfg.data)
    mcfg = MethodConfig(**{**asdict(cfg.train), "kind": cfg.methods[0], "seed": cfg.seed})
    est = train_method(mcfg, ds)
    X_te, y_te = ds.test
    report = calibration_report(est.predict_proba(X_te), y_te, cfg.n_bins, method=mcfg.kind, split="test")
    print(_fmt_report(report, args.percent))
    if args.out:
        save_checkpoint(est, args.out, extra={"config": cfg.to_dict(), "method": asdict(mcfg)})
        rpath = Path(args.out).with_suffix(".report.json")
        rpath.write_text(report.to_json() + "\n", encoding="utf-8")
        print(f"wrote checkpoint {args.out} and report {rpath}")
    return EXIT_OK


def cmd_eval(args) -> int:
    n_bins = args.bins or DEFAULT_N_BINS
    if bool(args.preds) == bool(args.checkpoint):
        raise UsageError("eval needs exactly one of --preds or --checkpoint")
    if args.preds:
        P, y = read_predictions_csv(args.preds)
        method = Path(args.preds).stem
    else:
        if not args.data:
            raise UsageError("--checkpoint needs --data")
        est, extra = load_checkpoint(args.checkpoint)
        X, y = _load_dataset(args.data).test
        P = est.predict_proba(X)
        method = extra.get("method", {}).get("kind", "")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        print("error: prediction rows must be non-negative and sum to 1", file=sys.stderr)
        return EXIT_FAIL
    if np.any(y < 0) or np.any(y >= P.shape[1]):
        print("error: labels out of range for the probability columns", file=sys.stderr)
        return EXIT_FAIL
    report = calibration_report(P, y, n_bins, method=method, split="eval")
    print(_fmt_report(report, args.percent))
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
        _write_reliability_csv(Path(args.out).with_suffix(".reliability.csv"), report)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed
    if seed is None:
        try:
            seed = int(os.environ.get("MHML_SEED", 0))
        except ValueError:
            raise UsageError("MHML_SEED must be an integer") from None
    print(f"resolved config: {json.dumps({'trials': args.trials, 'tol': args.tol, 'seed': seed})}",
          file=sys.stderr)
    reports = [
        gc.verify_property1(args.trials, args.tol, seed=seed),
        gc.verify_property2(args.trials, args.tol, seed=seed),
        gc.verify_symmetry(args.trials, seed=seed),
    ]
    for r in reports:
        print(r.summary_row())
    failed = [r for r in reports if not r.ok]
    for r in failed:
        for trial, coord, a, n in r.failures[:20]:
            print(f"  {r.name} trial={trial} coord={coord} analytic={a:.10g} numeric={n:.10g}")
        if len(r.failures) > 20:
            print(f"  ... {len(r.failures) - 20} more")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_suite(args) -> int:
    cfg = resolve_config(args)
    _echo_config(cfg)
    result = run_suite(cfg, jobs=max(1, args.jobs))
    doc = result.to_dict()
    table = render_table(doc, percent=args.percent)
    print(table)
    if args.out:
        Path(args.out).write_text(result.to_json(), encoding="utf-8")
        Path(args.out).with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    if any(c["error"] for c in result.cells):
        return EXIT_FAIL
    bad_ts = [c for c in doc["cells"] if "ts" in c and not
              (c["ts"]["accuracy_unchanged"] and c["ts"]["val_nll_not_worse"])]
    return EXIT_FAIL if bad_ts else EXIT_OK


def cmd_report(args) -> int:
    doc = json.loads(Path(args.result).read_text(encoding="utf-8"))
    if doc.get("format") != "mhml-result":
        print(f"error: {args.result}: not a result document", file=sys.stderr)
        return EXIT_FAIL
    table = render_table(doc, percent=args.percent)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "suite": cmd_suite,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mhml: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
