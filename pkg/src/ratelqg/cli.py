"""Command-line front end.

    ratelqg synthesize --plant plant.json --budget 80 --out design.json
    ratelqg tradeoff   --plant plant.json --dmin 20 --dmax 120 --points 50 --out curve.csv
    ratelqg simulate   --plant plant.json --budget 40 --steps 1000 --trials 100 --seed 7
    ratelqg asymptote  --plant plant.json

Exit codes: 0 success, 2 infeasible budget, 3 invalid input,
4 solver or numerical failure.  Diagnostics go to stderr as one line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from .errors import InfeasibleBudgetError, PlantFileError, PlantValidationError, SolverError
from .maxdet import SolverSettings
from .model import PartiallyObservedPlant, StationaryPlant, load_plant
from .riccati import solve_are
from .synthesis import (RANK_THRESHOLD, TradeoffCurve, data_rate_asymptote, synthesize,
                        tradeoff_curve)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_INVALID = 3
EXIT_SOLVER = 4

CURVE_HEADER = ["D", "DI_bits", "rank", "R_upper_bits", "feasible"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which would read as
    # "infeasible"; route usage errors to the invalid-input code instead.
    def error(self, message):
        raise _UsageError(message)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def emit_curve(curve: TradeoffCurve, path=None) -> str:
    """Write the curve as CSV (to ``path`` if given) and return the text.

    Comment lines carry the asymptote and the cost floor; infeasible rows
    leave the rate, rank and bound columns empty.
    """
    if not curve.samples:
        raise ValueError("curve has no samples")
    buf = io.StringIO()
    buf.write(f"# asymptote_bits={_fmt(curve.asymptote_bits)}\n")
    buf.write(f"# Dmin={_fmt(curve.Dmin)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for D, di, r, upper, ok in curve.samples:
        if ok:
            w.writerow([_fmt(D), _fmt(di), int(r), _fmt(upper), 1])
        else:
            w.writerow([_fmt(D), "", "", "", 0])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_curve(path) -> list[dict]:
    """Parse a curve file written by :func:`emit_curve`."""
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(rows))


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _positive(name):
    def parse(s):
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {s!r}") from None
        if not (np.isfinite(v) and v > 0):
            raise argparse.ArgumentTypeError(f"{name} must be positive, got {s}")
        return v
    return parse


def _count(name):
    def parse(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {s!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be at least 1, got {s}")
        return v
    return parse


def _seed(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {s!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _threshold(s):
    v = _positive("rank threshold")(s)
    if v >= 1:
        raise argparse.ArgumentTypeError("rank threshold must lie in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ratelqg", description="Minimum-rate LQG sensor and controller synthesis.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, budget=True):
        p.add_argument("--plant", required=True, help="plant file (JSON)")
        if budget:
            p.add_argument("--budget", type=_positive("budget"), required=True, help="LQG budget D")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--tolerance", type=_positive("tolerance"), default=SolverSettings().tolerance,
                       help="barrier gap tolerance")
        p.add_argument("--rank-threshold", type=_threshold, default=RANK_THRESHOLD,
                       help="relative SNR eigenvalue cutoff")

    common(sub.add_parser("synthesize", help="design sensor, filter and controller"))
    p = sub.add_parser("tradeoff", help="rate versus budget curve of a stationary plant")
    common(p, budget=False)
    p.add_argument("--dmin", type=_positive("dmin"), required=True)
    p.add_argument("--dmax", type=_positive("dmax"), required=True)
    p.add_argument("--points", type=_count("points"), default=20)
    p = sub.add_parser("simulate", help="Monte-Carlo check of a synthesized design")
    common(p)
    p.add_argument("--steps", type=_count("steps"), default=1000)
    p.add_argument("--trials", type=_count("trials"), default=100)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--trajectory", help="CSV file for the trajectory of trial 0")
    p = sub.add_parser("asymptote", help="minimum rate for mean-square stabilization")
    p.add_argument("--plant", required=True)
    p.add_argument("--out")
    return parser


def _base_A(plant):
    if isinstance(plant, StationaryPlant):
        return plant.A
    base = plant.plant if isinstance(plant, PartiallyObservedPlant) else plant
    return base.A[0]


def _cmd_synthesize(args, settings):
    plant = load_plant(args.plant)
    design = synthesize(plant, args.budget, settings, args.rank_threshold)
    _write(_dump_json(design.to_dict()), args.out)


def _cmd_tradeoff(args, settings):
    if args.dmax < args.dmin:
        raise ValueError("dmax must not be smaller than dmin")
    plant = load_plant(args.plant)
    if not isinstance(plant, StationaryPlant):
        raise ValueError("tradeoff needs a stationary plant")
    grid = np.linspace(args.dmin, args.dmax, args.points)
    curve = tradeoff_curve(plant, grid, settings, args.rank_threshold)
    text = emit_curve(curve, args.out)
    if args.out is None:
        sys.stdout.write(text)


def _cmd_simulate(args, settings):
    from .simulator import (SimConfig, empirical_cost, orthogonality_check,
                            simulate_closed_loop, whiteness_check, write_trajectory_csv)
    plant = load_plant(args.plant)
    design = synthesize(plant, args.budget, settings, args.rank_threshold)
    steps = args.steps if design.stationary else design.schedule.T
    config = SimConfig(steps=steps, trials=args.trials, seed=args.seed,
                       record_trajectory=args.trajectory is not None)
    result = simulate_closed_loop(design, plant, config)
    mean, se = empirical_cost(result)
    orth = orthogonality_check(result, design)
    white = whiteness_check(result)
    J_stage = design.J_analytic if design.stationary else design.J_analytic / design.schedule.T
    out = {
        "DI_bits": design.DI_bits,
        "J_analytic_per_stage": J_stage,
        "cost_per_stage": mean,
        "cost_stderr": se,
        "steps": steps,
        "trials": args.trials,
        "seed": args.seed,
        "diverged_trials": len(result.diverged),
        "max_state_norm": result.max_state_norm,
        "orthogonality_pass": bool(orth.passed),
        "whiteness_pass": bool(white.passed),
    }
    if args.trajectory:
        write_trajectory_csv(result, args.trajectory)
    _write(_dump_json(out), args.out)


def _cmd_asymptote(args, settings):
    plant = load_plant(args.plant)
    out = {"asymptote_bits": data_rate_asymptote(_base_A(plant))}
    if isinstance(plant, StationaryPlant):
        bundle = solve_are(plant)
        out["Dmin"] = float(np.trace(plant.W @ bundle.S[0]))
    _write(_dump_json(out), args.out)


COMMANDS = {
    "synthesize": _cmd_synthesize,
    "tradeoff": _cmd_tradeoff,
    "simulate": _cmd_simulate,
    "asymptote": _cmd_asymptote,
}


def run(argv=None) -> int:
    """Run one command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        settings = SolverSettings(tolerance=getattr(args, "tolerance", SolverSettings().tolerance))
    except _UsageError as exc:
        print(f"ratelqg: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        COMMANDS[args.command](args, settings)
    except InfeasibleBudgetError as exc:
        print(f"ratelqg: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PlantFileError, PlantValidationError, FileNotFoundError, IsADirectoryError,
            ValueError, TypeError) as exc:
        print(f"ratelqg: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SolverError, RuntimeError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"ratelqg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def main() -> None:
    sys.exit(run())
