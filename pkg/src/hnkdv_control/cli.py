"""Command-line entry point: ``hnkdv-control <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ExperimentConfig
from .solvers import SolverError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = ("simulate", "saturation", "check-a1", "gramian", "converge-tau", "fixed-time")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config (default: canonical)")
    common.add_argument("--output", type=Path, help="output directory (default: config output_dir)")
    common.add_argument("--workers", type=int, default=1, help="parallel workers for the tau ladder")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(
        prog="hnkdv-control",
        description="Small-time control experiments for higher-order KdV equations on the torus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="free evolution of u0")
    sim.add_argument("--linear", action="store_true", help="drop the nonlinear term")
    sat = sub.add_parser("saturation", parents=[common], help="saturation report for the mode set")
    sat.add_argument("--mode-cutoff", type=int, default=6)
    sat.add_argument("--k-max", type=int, default=6)
    sub.add_parser("check-a1", parents=[common], help="verify the reference trajectory")
    gr = sub.add_parser("gramian", parents=[common], help="Gramian diagnostics")
    gr.add_argument("--no-flat", action="store_true", help="skip the flat-trajectory comparison")
    sub.add_parser("converge-tau", parents=[common], help="steer along the tau ladder")
    sub.add_parser("fixed-time", parents=[common], help="steer in a prescribed total time")
    sub.add_parser("dump-config", parents=[common], help="print the resolved config as TOML")
    return parser


def _run(args, cfg: ExperimentConfig, out: Path) -> dict:
    if args.command == "simulate":
        return ex.cmd_simulate(cfg, out, nonlinear=not args.linear)
    if args.command == "saturation":
        return ex.cmd_saturation(cfg, out, args.mode_cutoff, args.k_max)
    if args.command == "check-a1":
        return ex.cmd_check_a1(cfg, out)
    if args.command == "gramian":
        return ex.cmd_gramian(cfg, out, compare_flat=not args.no_flat)
    if args.command == "converge-tau":
        return ex.cmd_converge_tau(cfg, out, workers=args.workers)
    if args.command == "fixed-time":
        return ex.cmd_fixed_time(cfg, out)
    raise AssertionError(args.command)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "dump-config":
        sys.stdout.write(cfg.to_toml())
        return EXIT_OK
    out = args.output or Path(cfg.output_dir)
    try:
        summary = _run(args, cfg, out)
    except (SolverError, ex.ExperimentError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
