"""Command-line entry point: ``snaper-hmc {run,sweep,compare,check}``.

Exit codes: 0 success, 1 run error, 2 config error, 3 check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import runner
from .checks import run_checks
from .config import (
    ConfigError,
    format_compare_config,
    format_sweep_config,
    load_config,
    parse_compare_config,
    parse_run_config,
    parse_sweep_config,
)

EXIT_OK, EXIT_RUN, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snaper-hmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "adaptive warmup followed by sampling"),
                        ("sweep", "fixed-hyperparameter sweep over trajectory length"),
                        ("compare", "replicated runs comparing criteria")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--quiet", action="store_true")
        if name == "compare":
            p.add_argument("--replicates", type=int, default=None)
    p = sub.add_parser("check", help="fast self-test of integrator, gradients and estimators")
    p.add_argument("--quiet", action="store_true")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, parse_run_config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    result = runner.run(cfg)
    out = runner.write_run_outputs(result, args.out)
    rep = result.report
    if not args.quiet:
        print(f"min ESS/grad {rep.ess_per_grad:.4g}  max R-hat {rep.max_rhat:.4f}  "
              f"step {rep.step_size:.4g}  mean tau {rep.mean_tau:.4g}  -> {out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, parse_sweep_config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    rows = runner.sweep(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "sweep.csv").write_text(runner.sweep_csv(rows))
    (args.out / "resolved_config.ini").write_text(format_sweep_config(cfg))
    if not args.quiet:
        print(f"{len(rows)} rows -> {args.out / 'sweep.csv'}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = load_config(args.config, parse_compare_config)
    if args.seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    if args.replicates is not None:
        cfg = replace(cfg, replicates=args.replicates)
    cfg.validate()
    rows, summary = runner.compare(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "replicates.csv").write_text(runner.compare_csv(rows))
    (args.out / "summary.csv").write_text(runner.summary_csv(summary))
    (args.out / "resolved_config.ini").write_text(format_compare_config(cfg))
    if not args.quiet:
        for crit, stat, q, value in summary:
            print(f"{crit:8s} {stat} p{q:g} = {value:.4g}")
    return EXIT_OK


def _cmd_check(args) -> int:
    results = run_checks()
    if not args.quiet:
        for res in results:
            print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "compare": _cmd_compare,
               "check": _cmd_check}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a run error
        print(f"run error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
