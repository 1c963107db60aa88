"""First-order solver for the per-(cluster, Eve) subproblems and the outer assembly.

Indexing is 0-based throughout; user k of a cluster is the k-th nearest user.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import BeamformerSet, NetworkGeometry, SystemConfig
from .mathkit import bisect_many, lambert_w0_from_log
from .outage import InfeasibleError, cop_from_threshold, d_tilde, kappa, sop_at

log = logging.getLogger(__name__)

_LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------

def xi_upper_bound(gamma: float, P_m: float, M: int, B: int, N: int, delta: float) -> float:
    """Largest xi with exp(-xi/2gamma)(1 + xi P_m s/2)^{1-M} >= 1 - delta, s = 2^{-B/(N-1)}."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if gamma <= 0 or P_m <= 0:
        raise ValueError("gamma and P_m must be positive")
    if M == 1:
        return -2.0 * gamma * math.log1p(-delta)
    b = 2.0 ** (B / (N - 1))
    c = gamma * (M - 1) * P_m
    z = b / c
    log_a = -math.log1p(-delta) / (M - 1)
    # W0(z e^z a): form the argument in logs so large z cannot overflow
    w = lambert_w0_from_log(math.log(z) + z + log_a)
    # xi = 2 gamma (M-1)(w - z); when z is large w - z cancels, so polish
    # d = w - z on its own equation d + log1p(d/z) = log a
    d = w - z
    for _ in range(4):
        h = d + math.log1p(d / z) - log_a
        d -= h / (1.0 + 1.0 / (z + d))
    return max(2.0 * gamma * (M - 1) * d, 0.0)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-4
    alg1_max: int = 50
    pg_max: int = 2000
    am_max: int = 100
    refine_max: int = 20
    z: float = 0.01
    step0: float = 1.0
    shrink: float = 0.5
    sigma: float = 1e-4
    max_backtracks: int = 30
    pg_residual_tol: float = 1e-3
    residual_step: float = 1e-4
    refine: bool = True
    workers: int = 1
    strict: bool = False      # raise on an infeasible subproblem instead of scoring it 0


@dataclass(frozen=True)
class Subproblem:
    """Read-only data of P2^[m,j]."""

    m: int
    j: int
    gamma: np.ndarray      # per user, SIC order
    gamma_e: float
    P_m: float
    M: int
    scale: float           # 2^{-B/(N-1)}
    xi_ub: np.ndarray
    beams: BeamformerSet = None

    @property
    def K(self) -> int:
        return self.gamma.size

    def kappa(self, epsilon_k) -> np.ndarray:
        eps = np.broadcast_to(np.asarray(epsilon_k, dtype=float), (self.K,))
        return np.array([kappa(self.beams, self.gamma_e, self.P_m, self.m, e) for e in eps])


def make_subproblem(cfg: SystemConfig, geometry: NetworkGeometry, beams: BeamformerSet,
                    m: int, j: int) -> Subproblem:
    gamma = np.asarray(geometry.gamma_users[m], dtype=float)
    P_m = cfg.cluster_power[m]
    xi_ub = np.array([xi_upper_bound(g, P_m, cfg.M, cfg.B, cfg.N, cfg.delta) for g in gamma])
    return Subproblem(m, j, gamma, float(geometry.gamma_eves[j]), P_m, cfg.M,
                      cfg.quant_scale, xi_ub, beams)


@dataclass
class SubproblemState:
    m: int
    j: int
    Xi: np.ndarray
    Theta: np.ndarray
    y: np.ndarray
    epsilon_k: np.ndarray
    kappa_vals: np.ndarray
    xi_ub: np.ndarray
    objective: float = 0.0
    trace: list = field(default_factory=list)
    alg1_iters: list = field(default_factory=list)
    pg_iters: list = field(default_factory=list)
    am_rounds: int = 0
    refine_rounds: int = 0
    sop: np.ndarray = None
    flags: list = field(default_factory=list)

    def check(self, tol: float = 1e-10) -> None:
        if np.any(self.Xi < -tol) or np.any(self.Xi > self.xi_ub * (1 + tol) + tol):
            raise AssertionError("Xi left its box")
        if np.any(self.Theta < -tol):
            raise AssertionError("Theta negative")


def initial_state(sub: Subproblem, epsilon_k) -> SubproblemState:
    eps = np.broadcast_to(np.asarray(epsilon_k, dtype=float), (sub.K,)).copy()
    kap = sub.kappa(eps)
    Xi = sub.xi_ub / 2.0
    Theta = np.full(sub.K, sub.P_m / sub.K)
    return SubproblemState(sub.m, sub.j, Xi, Theta, np.zeros(sub.K), eps, kap, sub.xi_ub.copy())


# ---------------------------------------------------------------------------
# Objective pieces
# ---------------------------------------------------------------------------

def _partial_sums(Theta):
    le = np.cumsum(Theta)
    lt = le - Theta
    total = le[-1] if Theta.size else 0.0
    return le, lt, total - Theta, total - le


def log_b(Xi, gamma, P_m, M, scale):
    """log B_k = Xi/(2 gamma) + (M-1) log(1 + Xi P_m s / 2)."""
    return Xi / (2.0 * gamma) + (M - 1) * np.log1p(Xi * P_m * scale / 2.0)


def rate_gap(Xi, Theta, kap, P_m) -> np.ndarray:
    """Unclamped log2 ratio f_k; raises when a kappa denominator is nonpositive."""
    Xi = np.asarray(Xi, dtype=float)
    Theta = np.asarray(Theta, dtype=float)
    le, lt, ne, _ = _partial_sums(Theta)
    den = kap + ne
    if np.any(den <= 0) or np.any(kap + P_m <= 0):
        bad = np.flatnonzero(den <= 0).tolist()
        raise InfeasibleError(f"kappa + interference <= 0 for users {bad}")
    return (np.log1p(Xi * le) - np.log1p(Xi * lt) + np.log(den) - np.log(kap + P_m)) / _LN2


def user_terms(sub: Subproblem, Xi, Theta, kap) -> np.ndarray:
    """Per-user (1 - COP) [R - D]^+ contributions."""
    a = np.maximum(rate_gap(Xi, Theta, kap, sub.P_m), 0.0)
    return np.exp(-log_b(np.asarray(Xi, float), sub.gamma, sub.P_m, sub.M, sub.scale)) * a


def objective(sub: Subproblem, Xi, Theta, kap, cop_weighted: bool = True) -> float:
    """P2^[m,j] objective; with ``cop_weighted=False`` the D1 sum of clamped log ratios."""
    if cop_weighted:
        return float(np.sum(user_terms(sub, Xi, Theta, kap)))
    return float(np.sum(np.maximum(rate_gap(Xi, Theta, kap, sub.P_m), 0.0)))


def d2_objective(Xi, Theta, kap, P_m, weights=None) -> float:
    """Smooth sum of f_k (optionally weighted), the objective of D2."""
    f = rate_gap(Xi, Theta, kap, P_m)
    return float(np.sum(f if weights is None else weights * f))


# ---------------------------------------------------------------------------
# Quadratic transform over Xi
# ---------------------------------------------------------------------------

def update_y(sub: Subproblem, state: SubproblemState) -> np.ndarray:
    a = np.maximum(rate_gap(state.Xi, state.Theta, state.kappa_vals, sub.P_m), 0.0)
    return np.sqrt(a) * np.exp(-log_b(state.Xi, sub.gamma, sub.P_m, sub.M, sub.scale))


def transformed_value(sub: Subproblem, Xi, Theta, kap, y) -> float:
    """Sum of g(Xi_k, y_k) = 2 y sqrt(A) - y^2 B."""
    a = np.maximum(rate_gap(Xi, Theta, kap, sub.P_m), 0.0)
    b = np.exp(log_b(np.asarray(Xi, float), sub.gamma, sub.P_m, sub.M, sub.scale))
    return float(np.sum(2.0 * y * np.sqrt(a) - y * y * b))


def positivity_threshold(Theta, kap) -> np.ndarray:
    """Xi above which A_k > 0: 1/(kappa + sum_{i>k} Theta_i), inf if that sum is <= 0."""
    _, _, _, gt = _partial_sums(np.asarray(Theta, float))
    den = kap + gt
    with np.errstate(divide="ignore"):
        return np.where(den > 0, 1.0 / np.where(den > 0, den, 1.0), np.inf)


def _xi_slope(sub, Theta, kap, y, idx):
    """Scaled dg/dXi for the users in ``idx``: A'/sqrt(A) - y B'; +inf where A <= 0."""
    le, lt, ne, _ = _partial_sums(Theta)
    le, lt, den = le[idx], lt[idx], kap[idx] + ne[idx]
    th, gam, yy = Theta[idx], sub.gamma[idx], y[idx]
    c = sub.P_m * sub.scale / 2.0
    const = (np.log(den) - np.log(kap[idx] + sub.P_m)) / _LN2

    def slope(x):
        a = (np.log1p(x * le) - np.log1p(x * lt)) / _LN2 + const
        da = th / ((1.0 + x * lt) * (1.0 + x * le) * _LN2)
        lb = x / (2.0 * gam) + (sub.M - 1) * np.log1p(x * c)
        db = np.exp(lb) * (1.0 / (2.0 * gam) + (sub.M - 1) * c / (1.0 + x * c))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = da / np.sqrt(a) - yy * db
        return np.where(a > 0, out, np.inf)

    return slope


def update_xi(sub: Subproblem, state: SubproblemState) -> np.ndarray:
    """Maximiser of g(., y_k) on [0, xi_ub] per user; flat users keep their value."""
    Xi = state.Xi.copy()
    tau = positivity_threshold(state.Theta, state.kappa_vals)
    live = (state.y > 0) & (tau < sub.xi_ub)
    idx = np.flatnonzero(live)
    if idx.size == 0:
        return Xi
    slope = _xi_slope(sub, state.Theta, state.kappa_vals, state.y, idx)
    hi = sub.xi_ub[idx]
    at_ub = slope(hi) >= 0
    lo = np.minimum(tau[idx] * (1.0 + 1e-12) + 1e-300, hi)
    root = bisect_many(slope, lo, hi)
    Xi[idx] = np.where(at_ub, hi, np.minimum(root, hi))
    return Xi


def _revive(sub: Subproblem, state: SubproblemState) -> np.ndarray:
    """Move users stuck at A_k = 0 into the region where A_k > 0 (never lowers the objective)."""
    Xi = state.Xi.copy()
    tau = positivity_threshold(state.Theta, state.kappa_vals)
    stuck = (Xi <= tau) & (tau < sub.xi_ub)
    Xi[stuck] = 0.5 * (tau[stuck] + sub.xi_ub[stuck])
    return Xi


def maximize_xi(sub: Subproblem, state: SubproblemState, opts: SolverOptions) -> SubproblemState:
    state.Xi = _revive(sub, state)
    prev = objective(sub, state.Xi, state.Theta, state.kappa_vals)
    iters = 0
    for iters in range(1, opts.alg1_max + 1):
        state.y = update_y(sub, state)
        state.Xi = update_xi(sub, state)
        cur = objective(sub, state.Xi, state.Theta, state.kappa_vals)
        if abs(cur - prev) <= opts.tol * max(abs(prev), 1e-300):
            prev = cur
            break
        prev = cur
    state.y = update_y(sub, state)
    state.alg1_iters.append(iters)
    return state


# ---------------------------------------------------------------------------
# Projected gradient over Theta
# ---------------------------------------------------------------------------

def gradient_theta(Xi, Theta, kap, P_m, weights=None) -> np.ndarray:
    """Gradient of sum_k w_k f_k with respect to Theta (w = 1 by default)."""
    Xi = np.asarray(Xi, dtype=float)
    Theta = np.asarray(Theta, dtype=float)
    w = np.ones_like(Theta) if weights is None else np.asarray(weights, dtype=float)
    le, lt, ne, _ = _partial_sums(Theta)
    den = kap + ne
    if np.any(den <= 0):
        raise InfeasibleError("kappa + interference <= 0")
    t1 = w * Xi / (1.0 + Xi * le)      # reaches every i <= k
    t2 = w * Xi / (1.0 + Xi * lt)      # reaches every i < k
    t3 = w / den                       # reaches every i != k
    g1 = np.cumsum(t1[::-1])[::-1]
    g2 = np.cumsum(t2[::-1])[::-1] - t2
    g3 = t3.sum() - t3
    return (g1 - g2 + g3) / _LN2


def project_simplex(v, P_m: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = P_m}.

    The KKT shift x = [v - (sum v - P_m)/K]^+ is exact while nothing clamps; once an
    entry clamps it is dropped and the shift is recomputed on the remaining support.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("empty vector")
    support = np.ones(v.size, dtype=bool)
    x = v.copy()
    for _ in range(v.size):
        shift = (v[support].sum() - P_m) / support.sum()
        x = np.where(support, v - shift, 0.0)
        neg = support & (x < 0)
        if not np.any(neg):
            break
        support &= ~neg
    x = np.maximum(x, 0.0)
    # tidy the last ulp so the sum is P_m to rounding
    s = x.sum()
    if s > 0:
        x *= P_m / s
    return x


@dataclass
class PGResult:
    Theta: np.ndarray
    value: float
    iterations: int
    stalled: bool
    trace: list


def update_theta_pg(Xi, Theta, kap, P_m, opts: SolverOptions = SolverOptions(),
                    weights=None, clip: bool = False) -> PGResult:
    """Armijo projected-gradient ascent on the simplex.

    Default: the smooth D2 sum of f_k. With ``weights`` and ``clip`` the ascent runs on
    sum_k w_k [f_k]^+, using the gradient of the currently positive terms.
    """
    Xi = np.asarray(Xi, dtype=float)
    theta = project_simplex(Theta, P_m)

    def value(t):
        try:
            f = rate_gap(Xi, t, kap, P_m)
        except InfeasibleError:
            return -np.inf
        if clip:
            f = np.maximum(f, 0.0)
        return float(np.sum(f if weights is None else weights * f))

    def grad(t):
        w = np.ones_like(t) if weights is None else np.asarray(weights, float)
        if clip:
            w = np.where(rate_gap(Xi, t, kap, P_m) > 0, w, 0.0)
        return gradient_theta(Xi, t, kap, P_m, w)

    cur = value(theta)
    if not np.isfinite(cur):
        raise InfeasibleError("projected-gradient start is outside the kappa domain")
    trace = [cur]
    stalled = False
    it = 0
    if theta.size == 1:
        return PGResult(theta, cur, 0, False, trace)
    for it in range(1, opts.pg_max + 1):
        g = grad(theta)
        step = opts.step0
        accepted = False
        for _ in range(opts.max_backtracks + 1):
            cand = project_simplex(theta + step * g, P_m)
            val = value(cand)
            if val >= cur + opts.sigma * float(g @ (cand - theta)) and val >= cur:
                accepted = True
                break
            step *= opts.shrink
        if not accepted or np.array_equal(cand, theta):
            stalled = not accepted
            break
        prev, theta, cur = cur, cand, val
        trace.append(cur)
        if abs(cur - prev) <= opts.tol * max(abs(prev), 1e-300):
            # a small relative change can come from a short Armijo step far from
            # stationarity; stop only once the projected-gradient residual is small too
            s = opts.residual_step
            if np.linalg.norm(project_simplex(theta + s * grad(theta), P_m) - theta) / s <= opts.pg_residual_tol:
                break
    return PGResult(theta, cur, it, stalled, trace)


def pg_residual(Xi, Theta, kap, P_m, s: float = 1e-4, weights=None) -> float:
    g = gradient_theta(Xi, Theta, kap, P_m, weights)
    return float(np.linalg.norm(project_simplex(Theta + s * g, P_m) - Theta) / s)


# ---------------------------------------------------------------------------
# Alternating maximisation and epsilon refinement
# ---------------------------------------------------------------------------

def solve_subproblem_am(sub: Subproblem, epsilon_k, opts: SolverOptions = SolverOptions()
                        ) -> SubproblemState:
    """Alternate the quadratic-transform Xi step and the projected-gradient Theta step from the standard start."""
    state = initial_state(sub, epsilon_k)
    # raises InfeasibleError when the uniform split is outside the kappa domain
    prev = objective(sub, state.Xi, state.Theta, state.kappa_vals)
    state.trace = [prev]
    for rnd in range(1, opts.am_max + 1):
        state = maximize_xi(sub, state, opts)
        w = np.exp(-log_b(state.Xi, sub.gamma, sub.P_m, sub.M, sub.scale))
        pg = update_theta_pg(state.Xi, state.Theta, state.kappa_vals, sub.P_m, opts,
                             weights=w, clip=True)
        state.Theta = pg.Theta
        state.pg_iters.append(pg.iterations)
        if pg.stalled:
            state.flags.append(f"pg-stall@{rnd}")
        cur = objective(sub, state.Xi, state.Theta, state.kappa_vals)
        state.trace.append(cur)
        state.am_rounds = rnd
        if abs(cur - prev) <= opts.tol * max(abs(prev), 1e-300):
            break
        prev = cur
    state.y = update_y(sub, state)
    state.objective = state.trace[-1]
    return state


def achieved_sop(sub: Subproblem, state: SubproblemState) -> np.ndarray:
    """Closed-form SOP of every user at D = D~(Theta, kappa)."""
    out = np.zeros(sub.K)
    for k in range(sub.K):
        D = d_tilde(state.Theta, state.kappa_vals[k], k)
        out[k] = sop_at(sub.beams, state.Theta, k, sub.m, sub.gamma_e, sub.P_m, D)
    return out


def active_users(sub: Subproblem, state: SubproblemState) -> np.ndarray:
    """Users that carry power; a user with Theta_k = 0 has SOP 0 whatever epsilon_k is."""
    return state.Theta > 1e-12 * sub.P_m


def refine_epsilon_k(sub: Subproblem, epsilon: float, opts: SolverOptions = SolverOptions()
                     ) -> SubproblemState:
    """Per-user bisection of epsilon_k on [epsilon, 1] so the achieved SOP approaches epsilon."""
    lo = np.full(sub.K, float(epsilon))
    hi = np.ones(sub.K)
    best = None
    state = None
    for rnd in range(1, opts.refine_max + 1):
        eps_k = 0.5 * (lo + hi)
        try:
            state = solve_subproblem_am(sub, eps_k, opts)
        except InfeasibleError:
            # kappa too negative at this epsilon_k: loosen every user whose denominator failed
            kap = sub.kappa(eps_k)
            ne = sub.P_m - sub.P_m / sub.K
            bad = kap + ne <= 0
            lo = np.where(bad, eps_k, lo)
            continue
        p = achieved_sop(sub, state)
        state.sop = p
        state.refine_rounds = rnd
        act = active_users(sub, state)
        ok = np.abs(p - epsilon) <= opts.z
        if best is None or (np.all(p <= epsilon + opts.z) and state.objective >= best.objective):
            best = state
        if np.all(ok | ~act):
            best = state
            break
        # an unpowered user's SOP is 0 whatever epsilon_k is, so it says nothing about its bracket
        below = p < epsilon
        lo = np.where(act & below, eps_k, lo)
        hi = np.where(act & ~below, eps_k, hi)
    if best is None:
        # even epsilon_k -> 1 could not be made feasible
        raise InfeasibleError(f"subproblem (m={sub.m}, j={sub.j}) infeasible for all epsilon_k")
    return best


def solve_fixed(sub: Subproblem, epsilon: float, opts: SolverOptions) -> SubproblemState:
    if opts.refine:
        return refine_epsilon_k(sub, epsilon, opts)
    state = solve_subproblem_am(sub, np.full(sub.K, epsilon), opts)
    state.sop = achieved_sop(sub, state)
    return state


# ---------------------------------------------------------------------------
# Outer solve over clusters and Eves
# ---------------------------------------------------------------------------

@dataclass
class Solution:
    xi: list              # per cluster arrays
    theta: list
    R: list
    D: list               # per cluster (K_m, J) arrays of D~ at the chosen point
    j_hat: int
    objective: float      # sum over m of the chosen Eve's subproblems
    per_j: np.ndarray     # per-Eve totals
    traces: dict          # (m, j) -> objective trace
    wall_time: float
    states: dict = field(default_factory=dict, repr=False)
    time_share: list = None   # TDMA-style weighting, None for NOMA
    infeasible: list = field(default_factory=list)   # (m, k, j) triples scored 0
    cop_violations: list = field(default_factory=list)   # (m, k) users with COP above delta

    def user_rate_terms(self, cfg: SystemConfig, geometry: NetworkGeometry) -> list:
        """(1 - COP)(R - D~_jhat)^+ per user at the reported point."""
        out = []
        for m, xi in enumerate(self.xi):
            if xi.size == 0:
                out.append(np.zeros(0))
                continue
            g = np.asarray(geometry.gamma_users[m])
            keep = np.exp(-log_b(xi, g, cfg.cluster_power[m], cfg.M, cfg.quant_scale))
            share = 1.0 if self.time_share is None else self.time_share[m]
            out.append(share * keep * np.maximum(self.R[m] - self.D[m][:, self.j_hat], 0.0))
        return out

    def rows(self, cfg: SystemConfig, geometry: NetworkGeometry) -> list:
        terms = self.user_rate_terms(cfg, geometry)
        rows = []
        for m, xi in enumerate(self.xi):
            for k in range(xi.size):
                rows.append({
                    "m": m, "k": k, "xi": float(xi[k]), "theta": float(self.theta[m][k]),
                    "R": float(self.R[m][k]), "D": float(self.D[m][k, self.j_hat]),
                    "rate_term": float(terms[m][k]),
                })
        return rows


def recover_rate(xi, theta) -> np.ndarray:
    """R = log2(1 + xi theta_k / (1 + xi sum_{i<k} theta_i))."""
    xi = np.asarray(xi, float)
    theta = np.asarray(theta, float)
    lt = np.cumsum(theta) - theta
    return np.log2(1.0 + xi * theta / (1.0 + xi * lt))


def _solve_task(args):
    sub, epsilon, opts = args
    t0 = time.perf_counter()
    try:
        st = solve_fixed(sub, epsilon, opts)
    except InfeasibleError as exc:
        log.warning("subproblem (m=%d, j=%d) infeasible: %s", sub.m, sub.j, exc)
        st = None
    return sub.m, sub.j, st, time.perf_counter() - t0


def infeasible_users(sub: Subproblem, epsilon: float) -> list:
    """Users whose kappa + (P_m - P_m/K) is not positive at epsilon_k = epsilon."""
    kap = sub.kappa(epsilon)
    bad = np.flatnonzero(kap + sub.P_m - sub.P_m / sub.K <= 0)
    return [int(k) for k in bad] or list(range(sub.K))


def solve_p2(cfg: SystemConfig, geometry: NetworkGeometry, beams: BeamformerSet,
             opts: SolverOptions = SolverOptions(), subproblem_hook=None) -> Solution:
    """Solve every nonempty (m, j) subproblem, pick the worst Eve, and recover rates."""
    t0 = time.perf_counter()
    tasks = []
    for m in range(cfg.M):
        if geometry.cluster_sizes[m] == 0:
            continue
        for j in range(cfg.J):
            sub = make_subproblem(cfg, geometry, beams, m, j)
            if subproblem_hook is not None:
                sub = subproblem_hook(sub)
            tasks.append((sub, cfg.epsilon, opts))
    if opts.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=opts.workers) as pool:
            results = list(pool.map(_solve_task, tasks))
    else:
        results = [_solve_task(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    states = {(m, j): st for m, j, st, _ in results}
    subs = {(t[0].m, t[0].j): t[0] for t in tasks}
    failed = [(m, k, j) for (m, j), st in states.items() if st is None
              for k in infeasible_users(subs[(m, j)], cfg.epsilon)]
    if failed and opts.strict:
        raise InfeasibleError("infeasible (m, k, j): " + ", ".join(map(str, failed)))

    per_j = np.zeros(cfg.J)
    for (m, j), st in states.items():
        per_j[j] += 0.0 if st is None else st.objective
    j_hat = int(np.argmin(per_j))   # lowest index on ties

    xi, theta, R, D = [], [], [], []
    for m in range(cfg.M):
        K = geometry.cluster_sizes[m]
        st = states.get((m, j_hat))
        if K == 0:
            xi.append(np.zeros(0)); theta.append(np.zeros(0))
            R.append(np.zeros(0)); D.append(np.zeros((0, cfg.J)))
            continue
        if st is None:
            x = np.zeros(K)
            t = np.full(K, cfg.cluster_power[m] / K)
        else:
            x, t = st.Xi.copy(), st.Theta.copy()
        dm = np.zeros((K, cfg.J))
        for j in range(cfg.J):
            sj = states.get((m, j))
            eps = sj.epsilon_k if sj is not None else np.ones(K)
            kap = subs[(m, j)].kappa(eps)
            for k in range(K):
                try:
                    dm[k, j] = d_tilde(t, kap[k], k)
                except InfeasibleError:
                    dm[k, j] = np.inf
        xi.append(x); theta.append(t); R.append(recover_rate(x, t)); D.append(dm)
    traces = {key: (st.trace if st is not None else []) for key, st in states.items()}
    return Solution(xi, theta, R, D, j_hat, float(per_j[j_hat]), per_j, traces,
                    time.perf_counter() - t0, states, infeasible=failed)


def cop_at_solution(cfg: SystemConfig, geometry: NetworkGeometry, sol: Solution, m: int, k: int) -> float:
    # I equals xi by construction of the recovered rate
    return cop_from_threshold(float(sol.xi[m][k]), float(geometry.gamma_users[m][k]),
                              cfg.cluster_power[m], cfg.M, cfg.quant_scale)
