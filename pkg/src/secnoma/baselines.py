"""Reference schemes: exhaustive grid oracle, TDMA within clusters, and NOMA that ignores CDI error."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .channel import BeamformerSet, NetworkGeometry, SystemConfig, generate_codebook_and_beamformers, eve_snr, user_snr
from .optimizer import (
    Solution,
    SolverOptions,
    Subproblem,
    cop_at_solution,
    log_b,
    make_subproblem,
    objective,
    recover_rate,
    solve_fixed,
    solve_p2,
    xi_upper_bound,
)
from .outage import InfeasibleError, d_tilde

_LN2 = np.log(2.0)
_OPEN_BOX = 100.0


@dataclass(frozen=True)
class GridSpec:
    points_per_axis: int = 200
    variables: tuple = ("xi", "theta")
    max_evaluations: int = 10 ** 8

    def __post_init__(self):
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be >= 2")
        if not set(self.variables) <= {"xi", "theta"} or not self.variables:
            raise ValueError("variables must be drawn from ('xi', 'theta')")


def simplex_lattice(K: int, n: int, total: float) -> np.ndarray:
    """All points total * c / n with c a composition of n into K non-negative parts."""
    if K == 1:
        return np.array([[total]])
    rows = []
    # stars and bars: choose K-1 bar positions among n + K - 1 slots
    for bars in combinations(range(n + K - 1), K - 1):
        edges = (-1,) + bars + (n + K - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(K)])
    return np.asarray(rows, dtype=float) * (total / n)


@dataclass
class OracleResult:
    Xi: np.ndarray
    Theta: np.ndarray
    objective: float
    evaluations: int


def grid_oracle(sub: Subproblem, kap, grid: GridSpec = GridSpec(), Theta=None, Xi=None) -> OracleResult:
    """Exhaustive maximisation of the P2^[m,j] objective on a product grid.

    With Theta fixed the objective is a sum of terms each depending on a single Xi_k,
    so the max over the Xi product grid is the sum of per-user maxima over each axis;
    this is exact, not a relaxation, and keeps K = 3 at 200 points per axis tractable.
    """
    K = sub.K
    if K > 3:
        raise ValueError(f"grid oracle supports K <= 3, got {K}")
    n = grid.points_per_axis
    kap = np.asarray(kap, dtype=float)
    if "theta" in grid.variables:
        thetas = simplex_lattice(K, n, sub.P_m)
    else:
        thetas = np.asarray(Theta if Theta is not None else np.full(K, sub.P_m / K), float)[None, :]
    if "xi" in grid.variables:
        xis = np.linspace(0.0, 1.0, n)[:, None] * sub.xi_ub[None, :]          # (n, K)
    else:
        xis = np.asarray(Xi if Xi is not None else sub.xi_ub / 2.0, float)[None, :]
    evals = thetas.shape[0] * xis.shape[0] * K
    if evals > grid.max_evaluations:
        raise ValueError(f"grid needs {evals} evaluations, above the {grid.max_evaluations} guard")

    weight = np.exp(-log_b(xis, sub.gamma[None, :], sub.P_m, sub.M, sub.scale))   # (n, K)
    best_val, best_idx = -np.inf, None
    chunk = max(1, 2_000_000 // max(xis.size, 1))
    for start in range(0, thetas.shape[0], chunk):
        th = thetas[start:start + chunk]                       # (L, K)
        le = np.cumsum(th, axis=1)
        lt = le - th
        den = kap[None, :] + th.sum(axis=1, keepdims=True) - th
        feasible = np.all(den > 0, axis=1)
        if not np.any(feasible):
            continue
        th, le, lt, den = th[feasible], le[feasible], lt[feasible], den[feasible]
        const = (np.log(den) - np.log(kap + sub.P_m)[None, :]) / _LN2          # (L, K)
        x = xis[None, :, :]                                                    # (1, n, K)
        f = (np.log1p(x * le[:, None, :]) - np.log1p(x * lt[:, None, :])) / _LN2 + const[:, None, :]
        terms = weight[None, :, :] * np.maximum(f, 0.0)                        # (L, n, K)
        arg = np.argmax(terms, axis=1)                                         # (L, K)
        vals = np.take_along_axis(terms, arg[:, None, :], axis=1)[:, 0, :].sum(axis=1)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val = float(vals[i])
            best_idx = (th[i].copy(), xis[arg[i], np.arange(K)].copy())
    if best_idx is None:
        raise InfeasibleError("every grid point violates the kappa domain")
    theta, xi = best_idx
    return OracleResult(xi, theta, best_val, evals)


def random_subproblem(rng: np.random.Generator, K: int, cfg: SystemConfig = None,
                      d_range=(1.0, 10.0), d_eve_range=(1.0, 10.0), m: int = 0) -> Subproblem:
    """A seeded single-cluster instance with users drawn from ``d_range`` metres."""
    cfg = cfg or SystemConfig(N=16, B=2, J=1, P=10.0)
    beams = generate_codebook_and_beamformers(cfg, rng)
    d = np.sort(rng.uniform(*d_range, K))
    gamma = np.asarray(user_snr(cfg, d), dtype=float)
    gamma_e = float(eve_snr(cfg, rng.uniform(*d_eve_range)))
    P_m = cfg.cluster_power[m]
    xi_ub = np.array([xi_upper_bound(g, P_m, cfg.M, cfg.B, cfg.N, cfg.delta) for g in gamma])
    return Subproblem(m, 0, gamma, gamma_e, P_m, cfg.M, cfg.quant_scale, xi_ub, beams)


# ---------------------------------------------------------------------------
# TDMA inside each cluster
# ---------------------------------------------------------------------------

def tdma_baseline(cfg: SystemConfig, geometry: NetworkGeometry, beams: BeamformerSet,
                  opts: SolverOptions = SolverOptions()) -> Solution:
    """Each user owns a 1/K_m time slot with the whole cluster power; slot rates are weighted by 1/K_m."""
    t0 = time.perf_counter()
    per_j = np.zeros(cfg.J)
    store = {}
    for m in range(cfg.M):
        K = geometry.cluster_sizes[m]
        for j in range(cfg.J):
            full = make_subproblem(cfg, geometry, beams, m, j)
            for k in range(K):
                single = replace(full, gamma=full.gamma[k:k + 1], xi_ub=full.xi_ub[k:k + 1])
                try:
                    st = solve_fixed(single, cfg.epsilon, opts)
                except InfeasibleError:
                    st = None
                store[(m, k, j)] = (single, st)
                per_j[j] += 0.0 if st is None else st.objective / K
    j_hat = int(np.argmin(per_j))
    xi, theta, R, D, share = [], [], [], [], []
    for m in range(cfg.M):
        K = geometry.cluster_sizes[m]
        x = np.zeros(K)
        dm = np.zeros((K, cfg.J))
        for k in range(K):
            _, st = store[(m, k, j_hat)]
            x[k] = 0.0 if st is None else st.Xi[0]
            for j in range(cfg.J):
                single, sj = store[(m, k, j)]
                dm[k, j] = 0.0 if sj is None else d_tilde(sj.Theta, sj.kappa_vals[0], 0)
        P_m = cfg.cluster_power[m]
        xi.append(x)
        theta.append(np.full(K, P_m))
        R.append(np.log2(1.0 + x * P_m))
        D.append(dm)
        share.append(1.0 / K if K else 1.0)
    traces = {key: (st.trace if st is not None else []) for key, (_, st) in store.items()}
    return Solution(xi, theta, R, D, j_hat, float(per_j[j_hat]), per_j, traces,
                    time.perf_counter() - t0, time_share=share)


# ---------------------------------------------------------------------------
# NOMA that treats the quantised direction as exact
# ---------------------------------------------------------------------------

def _perfect_cdi(cfg: SystemConfig):
    def hook(sub: Subproblem) -> Subproblem:
        # B -> infinity drops the residual-interference factor; the COP cap is switched off
        # by a box so wide that exp(-xi/2gamma) is e^-50 at its edge and never binds
        return replace(sub, scale=0.0, xi_ub=_OPEN_BOX * np.asarray(sub.gamma, float))
    return hook


def naive_noma_baseline(cfg: SystemConfig, geometry: NetworkGeometry, beams: BeamformerSet,
                        opts: SolverOptions = SolverOptions()) -> Solution:
    """Plan with perfect-CDI statistics, then score the plan under the finite-B objective."""
    plan = solve_p2(cfg, geometry, beams, opts, subproblem_hook=_perfect_cdi(cfg))
    per_j = np.zeros(cfg.J)
    for m in range(cfg.M):
        if geometry.cluster_sizes[m] == 0:
            continue
        for j in range(cfg.J):
            st = plan.states.get((m, j))
            if st is None:
                continue
            true_sub = make_subproblem(cfg, geometry, beams, m, j)
            per_j[j] += objective(true_sub, st.Xi, st.Theta, st.kappa_vals)
    j_hat = int(np.argmin(per_j))
    xi, theta = [], []
    for m in range(cfg.M):
        st = plan.states.get((m, j_hat))
        K = geometry.cluster_sizes[m]
        xi.append(st.Xi.copy() if st is not None else np.zeros(K))
        theta.append(st.Theta.copy() if st is not None else np.full(K, cfg.cluster_power[m] / max(K, 1)))
    R = [recover_rate(x, t) if x.size else np.zeros(0) for x, t in zip(xi, theta)]
    D = []
    for m in range(cfg.M):
        K = geometry.cluster_sizes[m]
        dm = np.zeros((K, cfg.J))
        for j in range(cfg.J):
            st = plan.states.get((m, j))
            if st is None or K == 0:
                continue
            for k in range(K):
                dm[k, j] = d_tilde(theta[m], st.kappa_vals[k], k)
        D.append(dm)
    sol = Solution(xi, theta, R, D, j_hat, float(per_j[j_hat]), per_j, plan.traces,
                   plan.wall_time, plan.states, infeasible=plan.infeasible)
    sol.cop_violations = cop_violations(cfg, geometry, sol)
    return sol


def cop_violations(cfg: SystemConfig, geometry: NetworkGeometry, sol: Solution, rtol: float = 1e-9) -> list:
    """(m, k) of users whose closed-form COP at the reported point exceeds delta."""
    out = []
    for m, x in enumerate(sol.xi):
        for k in range(x.size):
            if x[k] > 0 and cop_at_solution(cfg, geometry, sol, m, k) > cfg.delta * (1 + rtol):
                out.append((m, k))
    return out
