"""Command-line entry point: one subcommand per experiment plus ``verify``.

Exit codes: 0 success, 1 acceptance failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from typing import Sequence

from . import bench
from .config import load_config

# per-experiment size overrides: params key -> converter for its --flag
_int_list = lambda s: tuple(int(v) for v in s.split(","))  # noqa: E731
OVERRIDES = {
    "synthetic-lowrank": {"n": int, "order": int, "rank": int, "d": _int_list, "tol": float, "oversampling": int},
    "cancellation": {"n": int, "order": int, "d": int, "tol": float, "oversampling": int},
    "cookie": {"m": int, "params": int, "samples": _int_list, "tol": float, "inner_tol": float,
               "oversampling": int, "max_iter": int},
    "ndg-convergence": {"n_xi": _int_list, "xi_max": float, "t_final": float, "degrees": _int_list,
                        "nx": _int_list, "tol": float, "oversampling": int},
    "ndg-speedup": {"n_xi": _int_list, "nx": int, "degree": int, "xi_max": float, "t_final": float,
                    "tol": float, "oversampling": int},
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tuckersum", description="Tucker summation experiments at desk scale")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in bench.EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="config file with one [section] per experiment")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--strategy", action="append", choices=bench.ALL_STRATEGIES,
                       help="strategy to run; repeat for several (default: all that apply)")
        p.add_argument("--trials", type=int)
        p.add_argument("--no-timings", action="store_true", help="leave wall times empty for reproducible output")
        for key, conv in OVERRIDES[name].items():
            p.add_argument("--" + key.replace("_", "-"), dest="ov_" + key, type=conv, metavar=key.upper())
    v = sub.add_parser("verify", help="run the acceptance checks; exit 1 if any fails")
    v.add_argument("--criteria", type=_int_list, help="comma-separated criterion numbers (default: all)")
    v.add_argument("--seed", type=int, default=0)
    return ap


def build_spec(args: argparse.Namespace) -> bench.ExperimentSpec:
    section: dict = {}
    if args.config:
        try:
            section = dict(load_config(args.config).get(args.command, {}))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    strategies = section.pop("strategies", ())
    if isinstance(strategies, str):
        strategies = tuple(s.strip() for s in strategies.split(","))
    trials = section.pop("trials", 0)
    seed = section.pop("seed", 0)
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    for key in OVERRIDES[args.command]:
        val = getattr(args, "ov_" + key)
        if val is not None:
            params[key] = val
    if args.strategy:
        strategies = tuple(args.strategy)
    if args.trials is not None:
        if args.trials < 1:
            raise UsageError("--trials must be at least 1")
        trials = args.trials
    if args.seed is not None:
        seed = args.seed
    try:
        return bench.ExperimentSpec(args.command, params, tuple(strategies), int(trials), int(seed), args.out)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def main(argv: Sequence[str] | None = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "verify":
        from .acceptance import CRITERIA, run_all

        numbers = args.criteria or sorted(CRITERIA)
        bad = [n for n in numbers if n not in CRITERIA]
        if bad:
            print(f"unknown criteria: {bad}", file=sys.stderr)
            return 2
        results = run_all(numbers, seed=args.seed)
        return 0 if all(r.passed for r in results) else 1
    try:
        spec = build_spec(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = bench.run_experiment(spec)
    footer = [f"seed={spec.seed} trials={spec.trials}"] + [f"loosened: {s}" for s in bench.LOOSENED[spec.experiment]]
    try:
        text = bench.emit_report(rows, args.out, args.format, include_timings=not args.no_timings, footer=footer)
    except OSError as exc:
        print(f"error: cannot write report: {exc}", file=sys.stderr)
        return 2
    if args.out is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
