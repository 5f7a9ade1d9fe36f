"""Command-line entry point.

Precedence for overlapping settings is flag > config file > default; the
output directory falls back to ``$QUANTENS_OUT`` before the default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, parse_config
from .data import synth_ohlcv, write_ohlcv_csv
from .pipeline import (
    StageError,
    _Stage,
    _dump,
    ablation_rows,
    evaluate_stage,
    load_members,
    prepare_instruments,
    run_pipeline,
    train_members,
    train_stage,
    write_manifest,
    write_outputs,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
DEFAULT_OUT = "quantens-out"


def _load(args):
    config = parse_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    out = args.out or config.out or os.environ.get("QUANTENS_OUT") or DEFAULT_OUT
    return config, Path(out)


def cmd_run(args) -> int:
    config, out = _load(args)
    manifest = run_pipeline(config, out, args.jobs)
    print(f"wrote {len(manifest['files']) + 1} files to {out}")
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK


def cmd_train(args) -> int:
    config, out = _load(args)
    timings = {}
    ctx, results, doc = train_stage(config, args.jobs, timings, keep_models=True)
    with _Stage("emit", timings):
        out.mkdir(parents=True, exist_ok=True)
        (out / "members.json").write_text(_dump(doc))
        mdir = out / "models"
        mdir.mkdir(exist_ok=True)
        for r in results:
            (mdir / f"{r.symbol}_{r.architecture}.json").write_text(r.model.to_json() + "\n")
        if ctx.circuits:
            cdir = out / "circuits"
            cdir.mkdir(exist_ok=True)
            for sym, params in ctx.circuits.items():
                (cdir / f"{sym}.json").write_text(params.to_json() + "\n")
    write_manifest(out, config, timings)
    print(f"trained {len(results)} members; wrote {out / 'members.json'}")
    return EXIT_OK


def _members_path(args, out: Path) -> Path:
    return Path(args.members) if args.members else out / "members.json"


def cmd_evaluate(args) -> int:
    config, out = _load(args)
    doc = load_members(_members_path(args, out))
    timings = {}
    outputs, report, curves, bt = evaluate_stage(doc, config, timings)
    write_outputs(out, doc, config, outputs, report, curves, bt, {}, timings)
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK


def cmd_backtest(args) -> int:
    config, out = _load(args)
    if args.consensus is not None:
        config = config.replace(backtest=replace(config.backtest, consensus=args.consensus))
    doc = load_members(_members_path(args, out))
    _, _, curves, bt = evaluate_stage(doc, config, {})
    edir = out / "equity"
    edir.mkdir(parents=True, exist_ok=True)
    for name, (bc, curve) in curves.items():
        curve.to_csv(edir / f"{name}.csv")
        curve.write_summary(edir / f"{name}.json", bc)
    print(json.dumps(bt, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    config, out = _load(args)
    timings = {}
    with _Stage("ingest_features", timings):
        ctx = prepare_instruments(config, quantum=True)
    with _Stage("train", timings):
        results = train_members(ctx, config, args.jobs)
    with _Stage("ablation", timings):
        rows = ablation_rows(ctx, config, results, args.jobs)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(_dump({"config_hash": config.hash, "rows": rows}))
    for r in rows:
        print(f"{r['model']:<34} without {r['acc_without']:.4f}  with {r['acc_with']:.4f}  "
              f"gain {r['gain']:+.4f}  p {r['p']:.3f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    plan = [{"length": args.days, "drift": args.drift, "volatility": args.volatility}]
    series = synth_ohlcv(args.days, plan, args.signal, args.seed, symbol=args.symbol)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_ohlcv_csv(series, path)
    print(f"wrote {len(series)} bars to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantens", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def pipeline_cmd(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline JSON config")
        p.add_argument("--jobs", type=int, default=1, help="parallel member trainings")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--out", default=None, help="output directory")
        p.set_defaults(func=func)
        return p

    pipeline_cmd("run", cmd_run, "full pipeline")
    pipeline_cmd("train", cmd_train, "train all members and save them")
    for name, func, text in (("evaluate", cmd_evaluate, "ensembles and report from saved members"),
                             ("backtest", cmd_backtest, "backtest from saved members")):
        p = pipeline_cmd(name, func, text)
        p.add_argument("--members", default=None, help="members.json (default: OUT/members.json)")
        if name == "backtest":
            p.add_argument("--consensus", type=int, default=None, help="minimum agreeing members")
    pipeline_cmd("ablate", cmd_ablate, "quantum feature ablation")

    p = sub.add_parser("synth", help="write a synthetic OHLCV CSV")
    p.add_argument("--days", type=int, default=600)
    p.add_argument("--signal", type=float, default=0.0, help="planted signal strength in [0, 1]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--symbol", default="SYN")
    p.add_argument("--drift", type=float, default=0.0003)
    p.add_argument("--volatility", type=float, default=0.012)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
