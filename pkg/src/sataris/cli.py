"""Command line entry point: ``sataris run|sweep|validate``."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .harness import (ExperimentSpec, FIGURE_AXES, OUTPUT_ENV, default_out_dir, export_results,
                      figure_spec, load_experiment, run_experiment, summarize)
from .scenario import ConfigError, desk_config, load_scenario


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="first seed (default: from spec or 0)")
    p.add_argument("--trials", type=int, default=None, help="seeds per sweep point")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", default=None, help=f"output directory (default: ${OUTPUT_ENV} or ./results)")
    p.add_argument("--timing", action="store_true", help="include wall time column in result files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sataris", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment file")
    run.add_argument("spec", type=Path)
    _common(run)
    sweep = sub.add_parser("sweep", help="run a preconfigured figure sweep at desk scale")
    sweep.add_argument("--figure", type=int, required=True, choices=sorted(FIGURE_AXES))
    sweep.add_argument("--config", type=Path, default=None, help="experiment file with base settings")
    _common(sweep)
    val = sub.add_parser("validate", help="check a scenario or experiment file")
    val.add_argument("config", type=Path)
    return parser


def _with_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    return ExperimentSpec(spec.config, spec.axes,
                          args.trials if args.trials is not None else spec.trials,
                          args.seed if args.seed is not None else spec.seed_base,
                          spec.schemes, args.out or spec.out_dir or default_out_dir())


def _execute(spec: ExperimentSpec, args, stem: str) -> int:
    t0 = time.perf_counter()
    table = run_experiment(spec, workers=args.workers)
    paths = export_results(table, spec.out_dir, stem=stem, timing=args.timing)
    print(summarize(table))
    failed = sum(1 for r in table.rows if r["status"] != "ok")
    print(f"{len(table)} rows ({failed} failed) in {time.perf_counter() - t0:.1f} s -> "
          + ", ".join(str(p) for p in paths))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            text = args.config.read_text()
            try:
                spec = load_experiment(text)
                print(f"ok: experiment with {len(spec.grid())} point(s) x {spec.trials} trial(s)")
            except ConfigError:
                load_scenario(text).validate()
                print("ok: scenario")
            return 0
        if args.command == "run":
            spec = _with_overrides(load_experiment(args.spec.read_text()), args)
            return _execute(spec, args, "results")
        base = load_experiment(args.config.read_text()) if args.config else ExperimentSpec(desk_config())
        spec = _with_overrides(figure_spec(args.figure, base), args)
        return _execute(spec, args, f"figure{args.figure}")
    except ConfigError as exc:
        field = f" [{exc.field}]" if getattr(exc, "field", None) else ""
        print(f"config error{field}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
