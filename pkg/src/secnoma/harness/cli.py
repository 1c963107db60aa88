"""Command line entry point: ``secnoma <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..optimizer import SolverOptions, solve_p2
from ..outage import InfeasibleError
from .experiments import run_experiment, stream
from .scenario import ExperimentPlan, ParseError, load_plan, load_scenario
from .table import emit_csv, to_csv_text

log = logging.getLogger("secnoma")


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--workers", type=int, default=1, help="process pool size for subproblems")
    common.add_argument("--out", type=Path, default=None, help="CSV path; stdout when omitted")
    common.add_argument("--tol", type=float, default=1e-4, help="relative stopping tolerance")
    common.add_argument("--strict", action="store_true",
                        help="fail on an infeasible subproblem instead of scoring it 0")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="secnoma", description="Secure NOMA power and rate design under limited feedback.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve one scenario; one row per user")
    s.add_argument("scenario", type=Path)

    s = sub.add_parser("experiment", parents=[common], help="run an experiment plan")
    s.add_argument("plan", type=Path)
    s.add_argument("--trials", type=int, default=None, help="override the plan's trial count")

    s = sub.add_parser("validate", parents=[common], help="closed-form outage vs Monte Carlo at the solution")
    s.add_argument("scenario", type=Path)
    s.add_argument("--samples", type=int, default=10 ** 5)
    s.add_argument("--trials", type=int, default=1)

    s = sub.add_parser("oracle-check", parents=[common], help="solver vs exhaustive grid on small subproblems")
    s.add_argument("scenario", type=Path)
    s.add_argument("--K", type=int, default=2, choices=(1, 2, 3))
    s.add_argument("--grid", type=int, default=200, help="points per axis")
    s.add_argument("--trials", type=int, default=20)

    s = sub.add_parser("bench", parents=[common], help="wall time versus total user count")
    s.add_argument("scenario", type=Path)
    s.add_argument("--users", type=_int_list, default=[8, 16, 32, 64])
    s.add_argument("--trials", type=int, default=3)
    return p


def _write(rows: list, out) -> None:
    if out is None:
        sys.stdout.write(to_csv_text(rows))
    else:
        emit_csv(rows, out)
        log.info("wrote %d rows to %s", len(rows), out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = SolverOptions(tol=args.tol, workers=args.workers, strict=args.strict)
    try:
        if args.command == "solve":
            sc = load_scenario(args.scenario)
            system = sc.build(stream(args.seed, 0))
            sol = solve_p2(system.cfg, system.geometry, system.beams, opts)
            rows = [dict(r, j_hat=sol.j_hat) for r in sol.rows(system.cfg, system.geometry)]
            log.info("objective %.6g at j_hat=%d in %.3fs", sol.objective, sol.j_hat, sol.wall_time)
            _write(rows, args.out)
            return 0
        if args.command == "experiment":
            plan = load_plan(args.plan)
            if args.trials is not None:
                plan = replace(plan, trials=args.trials)
            out = args.out if args.out is not None else (
                args.plan.parent / plan.output if plan.output else None)
        else:
            sc = load_scenario(args.scenario)
            if args.command == "validate":
                plan = ExperimentPlan(sc, "validate-outage", trials=args.trials, samples=args.samples)
            elif args.command == "oracle-check":
                plan = ExperimentPlan(sc, "oracle-check", grid=(args.grid,), trials=args.trials, K=args.K)
            else:
                plan = ExperimentPlan(sc, "timing", grid=tuple(args.users), trials=args.trials)
            out = args.out
        _write(run_experiment(plan, args.seed, opts), out)
        return 0
    except (ParseError, InfeasibleError, ValueError, OSError) as exc:
        print(f"secnoma: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
