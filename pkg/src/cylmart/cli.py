"""Command-line entry point.

Usage::

    cylmart <experiment> [--config file.json] [--seed N] [--paths N]
            [--grid K] [--out DIR] [--force]
    cylmart replay <report.json or run directory>
    cylmart plotdata <report.json> [--out DIR]

Exit code 0 means every criterion of the run passed.  CYLMART_THREADS caps
worker threads (speed only; results are identical at any setting).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import EXPERIMENTS, experiment_defaults
from .harness import ConfigError, ReplayMismatch, RunReport, emit_plotdata, replay, run, validate_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cylmart", description="stochastic-calculus verification experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in sorted(EXPERIMENTS):
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="JSON config file to merge")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--grid", type=int, default=None)
        p.add_argument("--out", type=str, default="runs")
        p.add_argument("--force", action="store_true", help="reuse an existing run dir")

    pr = sub.add_parser("replay", help="re-run a stored report and compare bit-exactly")
    pr.add_argument("report", type=Path)

    pp = sub.add_parser("plotdata", help="emit CSV series from a stored report")
    pp.add_argument("report", type=Path)
    pp.add_argument("--out", type=str, default=".")
    return parser


def _assemble_config(args) -> dict:
    cfg = {"schema": 1, "experiment": args.command, "seed": 20240, "out": args.out, "params": {}}
    if args.config is not None:
        loaded = json.loads(Path(args.config).read_text())
        if "experiment" in loaded and loaded["experiment"] != args.command:
            raise ConfigError(
                f"config file is for {loaded['experiment']!r}, not {args.command!r}"
            )
        loaded.setdefault("experiment", args.command)
        loaded.setdefault("out", args.out)
        cfg = {**cfg, **loaded}
        cfg["params"] = dict(loaded.get("params") or {})
    if args.seed is not None:
        cfg["seed"] = args.seed
    defaults = experiment_defaults(args.command)
    for short in ("paths", "grid"):
        val = getattr(args, short)
        if val is not None:
            if short not in defaults:
                raise ConfigError(f"experiment {args.command!r} takes no --{short}")
            cfg["params"][short] = val
    if args.out is not None:
        cfg["out"] = args.out
    return validate_config(cfg)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            report = replay(args.report)
            print(f"replay of {args.report}: metrics identical")
            for line in report.summary_lines():
                print(line)
            return 0 if report.passed else 1
        if args.command == "plotdata":
            stored = RunReport.from_json(json.loads(Path(args.report).read_text()))
            paths = emit_plotdata(stored, args.out)
            for p in paths:
                print(p)
            return 0
        cfg = _assemble_config(args)
        report = run(cfg, force=args.force)
        for line in report.summary_lines():
            print(line)
        if report.run_dir:
            print(f"report written to {report.run_dir}")
        return 0 if report.passed else 1
    except (ConfigError, ReplayMismatch, FileExistsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
