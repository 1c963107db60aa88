"""Seeded experiment runners; each returns a list of row dicts ready for ``emit_csv``."""

from __future__ import annotations

import math
import time
from dataclasses import replace

import numpy as np

from ..baselines import GridSpec, grid_oracle, naive_noma_baseline, random_subproblem, tdma_baseline
from ..optimizer import SolverOptions, Solution, solve_fixed, solve_p2
from ..outage import (
    CopInput,
    SopInput,
    cop_closed_form,
    cop_monte_carlo,
    cop_monte_carlo_vector,
    sop_closed_form,
    sop_monte_carlo,
)
from .scenario import ExperimentPlan, Scenario

_SCHEMES = {
    "sweep-delta": ("proposed", "tdma"),
    "sweep-M": ("proposed", "tdma"),
    "sweep-epsilon": ("proposed", "naive"),
    "sweep-P": ("proposed", "naive"),
}


def stream(master: int, *path: int) -> np.random.Generator:
    """Independent generator for (master, trial, ...); the key path alone fixes the stream."""
    return np.random.default_rng(np.random.SeedSequence([int(master), *map(int, path)]))


def _solve(scheme: str, system, opts: SolverOptions) -> Solution:
    if scheme == "proposed":
        return solve_p2(system.cfg, system.geometry, system.beams, opts)
    if scheme == "tdma":
        return tdma_baseline(system.cfg, system.geometry, system.beams, opts)
    if scheme == "naive":
        return naive_noma_baseline(system.cfg, system.geometry, system.beams, opts)
    raise ValueError(f"unknown scheme {scheme!r}")


def _summary(sol: Solution) -> dict:
    states = [s for s in sol.states.values() if s is not None]

    def peak(get):
        return max((max(get(s), default=0) for s in states), default=0)

    return {
        "objective": float(sol.objective),
        "j_hat": sol.j_hat,
        "alg1_iters_max": peak(lambda s: s.alg1_iters),
        "pg_iters_max": peak(lambda s: s.pg_iters),
        "am_rounds_max": max((s.am_rounds for s in states), default=0),
        "refine_rounds_max": max((s.refine_rounds for s in states), default=0),
        "infeasible": len(sol.infeasible),
        "cop_violations": len(sol.cop_violations),
    }


def _sweep_scenario(plan: ExperimentPlan, value: float) -> tuple:
    sc = plan.scenario
    if "naive" in _SCHEMES[plan.experiment]:
        # the comparison with perfect-CDI NOMA is made against the nearest-indexed Eve only
        sc = sc.with_config(J=1)
    if plan.experiment == "sweep-delta":
        return "delta", value, sc.with_config(delta=value)
    if plan.experiment == "sweep-epsilon":
        return "epsilon", value, sc.with_config(epsilon=value)
    if plan.experiment == "sweep-P":
        return "P_dB", value, sc.with_config(P=plan.grid_linear[plan.grid.index(value)])
    if plan.experiment == "sweep-M":
        B = math.log2(value)
        if B != int(B):
            raise ValueError(f"M must be a power of two, got {value}")
        return "M", int(value), sc.with_config(B=int(B), cluster_power=None)
    raise ValueError(plan.experiment)


def run_sweep(plan: ExperimentPlan, seed: int, opts: SolverOptions) -> list:
    rows = []
    for value in plan.grid:
        name, label, sc = _sweep_scenario(plan, value)
        for t in range(plan.trials):
            # every grid point of one trial shares its draw, so curves are paired
            system = sc.build(stream(seed, t))
            for scheme in _SCHEMES[plan.experiment]:
                t0 = time.perf_counter()
                sol = _solve(scheme, system, opts)
                row = {"experiment": plan.experiment, "trial": t, name: label, "scheme": scheme}
                row.update(_summary(sol))
                if plan.timing:
                    row["wall_s"] = time.perf_counter() - t0
                rows.append(row)
    return rows


def run_convergence(plan: ExperimentPlan, seed: int, opts: SolverOptions) -> list:
    rows = []
    for t in range(plan.trials):
        system = plan.scenario.build(stream(seed, t))
        sol = solve_p2(system.cfg, system.geometry, system.beams, opts)
        for (m, j), st in sorted(sol.states.items()):
            if st is None:
                continue
            for r, val in enumerate(st.trace):
                rows.append({
                    "experiment": "convergence", "trial": t, "m": m, "j": j, "round": r,
                    "objective": float(val),
                    "alg1_iters": st.alg1_iters[r - 1] if r > 0 else 0,
                    "pg_iters": st.pg_iters[r - 1] if r > 0 else 0,
                    "am_rounds": st.am_rounds, "refine_rounds": st.refine_rounds,
                })
    return rows


def run_validate_outage(plan: ExperimentPlan, seed: int, opts: SolverOptions) -> list:
    """Closed form against both Monte Carlo routes at the solver's operating point."""
    rows = []
    n = plan.samples
    for t in range(plan.trials):
        system = plan.scenario.build(stream(seed, t))
        cfg, geo, beams = system.cfg, system.geometry, system.beams
        sol = solve_p2(cfg, geo, beams, opts)
        for m, xi in enumerate(sol.xi):
            theta = tuple(sol.theta[m])
            for k in range(xi.size):
                cin = CopInput(float(sol.R[m][k]), theta, k, float(geo.gamma_users[m][k]),
                               cfg.cluster_power[m], cfg.M, cfg.B, cfg.N)
                xy = cop_monte_carlo(cin, n, stream(seed, t, m, k, 0))
                vec = cop_monte_carlo_vector(cin, beams, m, n, stream(seed, t, m, k, 1))
                rows.append({
                    "experiment": "validate-outage", "trial": t, "m": m, "k": k, "j": -1,
                    "quantity": "cop", "argument": cin.R, "closed_form": cop_closed_form(cin),
                    "mc_p": xy.p, "mc_stderr": xy.stderr,
                    "mc_vector_p": vec.p, "mc_vector_stderr": vec.stderr, "samples": n,
                })
                for j in range(cfg.J):
                    D = float(sol.D[m][k, j])
                    if not math.isfinite(D):
                        continue
                    sin = SopInput(D, theta, k, float(geo.gamma_eves[j]), beams, m, cfg.cluster_power[m])
                    est = sop_monte_carlo(sin, n, stream(seed, t, m, k, 2 + j))
                    rows.append({
                        "experiment": "validate-outage", "trial": t, "m": m, "k": k, "j": j,
                        "quantity": "sop", "argument": D, "closed_form": sop_closed_form(sin),
                        "mc_p": est.p, "mc_stderr": est.stderr, "samples": n,
                    })
    return rows


def run_oracle_check(plan: ExperimentPlan, seed: int, opts: SolverOptions) -> list:
    rows = []
    points = int(plan.grid[0]) if plan.grid else 200
    for t in range(plan.trials):
        sub = random_subproblem(stream(seed, t), plan.K, cfg=replace(plan.scenario.cfg, J=1))
        st = solve_fixed(sub, plan.scenario.cfg.epsilon, replace(opts, refine=False))
        orc = grid_oracle(sub, st.kappa_vals, GridSpec(points))
        gap = (st.objective - orc.objective) / orc.objective if orc.objective > 0 else 0.0
        rows.append({
            "experiment": "oracle-check", "trial": t, "K": plan.K, "grid": points,
            "solver_objective": st.objective, "oracle_objective": orc.objective,
            "relative_gap": gap, "evaluations": orc.evaluations,
        })
    return rows


def run_timing(plan: ExperimentPlan, seed: int, opts: SolverOptions) -> list:
    """Mean and sample standard deviation of solve wall time per total user count."""
    rows = []
    for users in plan.grid:
        sc: Scenario = plan.scenario.with_users(int(users))
        walls, objs = [], []
        for t in range(plan.trials):
            system = sc.build(stream(seed, t))
            t0 = time.perf_counter()
            sol = solve_p2(system.cfg, system.geometry, system.beams, opts)
            walls.append(time.perf_counter() - t0)
            objs.append(sol.objective)
        rows.append({
            "experiment": "timing", "users": int(users), "trials": plan.trials,
            "mean_s": float(np.mean(walls)),
            "sd_s": float(np.std(walls, ddof=1)) if len(walls) > 1 else 0.0,
            "mean_objective": float(np.mean(objs)),
        })
    return rows


_RUNNERS = {
    "convergence": run_convergence,
    "sweep-delta": run_sweep,
    "sweep-M": run_sweep,
    "sweep-epsilon": run_sweep,
    "sweep-P": run_sweep,
    "validate-outage": run_validate_outage,
    "oracle-check": run_oracle_check,
    "timing": run_timing,
}


def run_experiment(plan: ExperimentPlan, seed: int = 0, opts: SolverOptions = SolverOptions()) -> list:
    rows = _RUNNERS[plan.experiment](plan, seed, opts)
    if not rows:
        raise RuntimeError(f"experiment {plan.experiment!r} produced no rows")
    return rows
