"""Command line: ``plc-sbl run | gain | selftest``.

Exit codes: 0 success, 1 configuration error, 2 runtime or numerical failure.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ESTIMATORS, ConfigError, ExperimentConfig, default_noise, load_config
from .simulate import SimulationError, format_csv, read_csv, run_sweep, snr_gain

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="plc-sbl", description="Impulsive-noise mitigation BER sweeps.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a BER sweep")
    run.add_argument("--config", help="YAML experiment file (defaults apply without one)")
    run.add_argument("--out", help="CSV output path (stdout when omitted)")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--snr", help="comma-separated SNR points in dB")
    run.add_argument("--estimator", choices=ESTIMATORS)
    run.add_argument("--noise", choices=("gm", "mca", "lptv", "awgn"),
                     help="noise family with its reference parameters")
    run.add_argument("--symbols", type=int,
                     help="simulate exactly this many symbols per point (rounded up to blocks)")
    run.add_argument("--workers", type=int, default=1, help="worker processes per point")
    run.add_argument("--timing", action="store_true", help="record wall time in elapsed_s")
    run.add_argument("--no-resume", action="store_true",
                     help="recompute points already present in --out")

    gain = sub.add_parser("gain", help="SNR gain of curve B over curve A at a target BER")
    gain.add_argument("csv_a")
    gain.add_argument("csv_b")
    gain.add_argument("--target", type=float, default=1e-3)
    gain.add_argument("--estimator-a", help="select rows of csv_a by estimator")
    gain.add_argument("--estimator-b", help="select rows of csv_b by estimator")

    sub.add_parser("selftest", help="run the quick invariant checks")
    return p


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes: dict = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.snr is not None:
        try:
            changes["snr_points"] = tuple(float(s) for s in args.snr.split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"bad --snr list: {args.snr}") from exc
    if args.estimator is not None:
        changes["estimator"] = args.estimator
        if args.estimator == "decision_feedback":
            changes["coded"] = True
    if args.noise is not None:
        changes["noise"] = default_noise(args.noise)
    if args.symbols is not None:
        if args.symbols < 1:
            raise ConfigError("--symbols must be positive")
        changes.update(min_symbols=args.symbols, max_symbols=args.symbols, min_bit_errors=0)
    if args.timing:
        changes["timing"] = True
    return cfg.replace(**changes) if changes else cfg


def _select(records, estimator):
    if estimator is None:
        return records
    return [r for r in records if r.estimator == estimator]


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            records = run_sweep(cfg, args.out, resume=not args.no_resume, workers=args.workers)
            if args.out is None:
                sys.stdout.write(format_csv(records))
        elif args.command == "gain":
            try:
                a = _select(read_csv(args.csv_a), args.estimator_a)
                b = _select(read_csv(args.csv_b), args.estimator_b)
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"cannot read curves: {exc}") from exc
            print(f"{snr_gain(a, b, args.target):.3f}")
        else:
            from .selftest import run_selftest

            if not run_selftest():
                return EXIT_RUNTIME
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, np.linalg.LinAlgError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # curve does not reach the target BER
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
