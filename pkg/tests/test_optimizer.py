import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import optimize

from secnoma.baselines import random_subproblem
from secnoma.channel import SystemConfig, build_system
from secnoma.mathkit import finite_difference_gradient
from secnoma.optimizer import (
    SolverOptions,
    active_users,
    achieved_sop,
    maximize_xi,
    cop_at_solution,
    d2_objective,
    gradient_theta,
    initial_state,
    objective,
    pg_residual,
    project_simplex,
    rate_gap,
    recover_rate,
    refine_epsilon_k,
    solve_p2,
    solve_subproblem_am,
    transformed_value,
    update_theta_pg,
    update_xi,
    update_y,
    xi_upper_bound,
)
from secnoma.outage import CopInput, InfeasibleError, cop_closed_form, d_tilde, sop_at


def cop_keep(xi, gamma, P_m, M, B, N):
    s = 2 ** (-B / (N - 1))
    return math.exp(-xi / (2 * gamma)) * (1 + xi * P_m * s / 2) ** (1 - M)


def xi_ub_oracle(gamma, P_m, M, B, N, delta):
    f = lambda x: cop_keep(x, gamma, P_m, M, B, N) - (1 - delta)
    hi = 1.0
    while f(hi) > 0:
        hi *= 2
    return optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


def sort_projection(v, z):
    # Held-Karp / Michelot threshold via sorting
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    rho = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


# --- xi upper bound ------------------------------------------------------------------

def test_xi_ub_spec_instance():
    ub = xi_upper_bound(10.0, 0.25, 4, 2, 16, 0.5)
    assert cop_keep(ub, 10.0, 0.25, 4, 2, 16) == pytest.approx(0.5, abs=1e-10)
    assert ub == pytest.approx(xi_ub_oracle(10.0, 0.25, 4, 2, 16, 0.5), abs=1e-9)


def test_xi_ub_limits():
    assert xi_upper_bound(10.0, 0.25, 4, 2, 16, 1e-12) < 1e-9
    assert xi_upper_bound(3.0, 1.0, 1, 0, 8, 0.3) == pytest.approx(-6.0 * math.log(0.7))
    with pytest.raises(ValueError):
        xi_upper_bound(1.0, 0.25, 4, 2, 16, 1.0)


@given(st.floats(-5, 4), st.floats(0.01, 0.99), st.integers(1, 4), st.sampled_from([8, 16, 64]))
def test_xi_ub_defining_equation(log_gamma, delta, B, N):
    assume(2 ** B <= N)
    gamma, M, P_m = 10 ** log_gamma, 2 ** B, 1.0 / 2 ** B
    ub = xi_upper_bound(gamma, P_m, M, B, N, delta)
    assert cop_keep(ub, gamma, P_m, M, B, N) == pytest.approx(1 - delta, abs=1e-10)
    ref = xi_ub_oracle(gamma, P_m, M, B, N, delta)
    assert ub == pytest.approx(ref, rel=1e-9, abs=1e-12)


# --- objective and quadratic transform --------------------------------------------------

@pytest.fixture
def sub2():
    return random_subproblem(np.random.default_rng(11), 2)


def test_objective_zero_xi(sub2):
    st_ = initial_state(sub2, 0.1)
    assert objective(sub2, np.zeros(2), st_.Theta, st_.kappa_vals) == 0.0


def test_objective_equals_cop_times_secure_rate():
    cfg = SystemConfig(N=16, B=2, J=1, P=10.0)
    for seed in range(5):
        sub = random_subproblem(np.random.default_rng(seed), 2, cfg)
        rng = np.random.default_rng(100 + seed)
        Theta = rng.dirichlet([1, 1]) * sub.P_m
        Xi = rng.uniform(0, 1, 2) * sub.xi_ub
        kap = sub.kappa(0.3)
        R = recover_rate(Xi, Theta)
        hand = 0.0
        for k in range(2):
            cop = cop_closed_form(CopInput(R[k], tuple(Theta), k, sub.gamma[k], sub.P_m, 4, 2, 16))
            hand += (1 - cop) * max(R[k] - d_tilde(Theta, kap[k], k), 0.0)
        assert objective(sub, Xi, Theta, kap) == pytest.approx(hand, rel=1e-10, abs=1e-14)


def test_quadratic_transform_tightness():
    for seed in range(10):
        sub = random_subproblem(np.random.default_rng(seed), 3)
        state = initial_state(sub, 0.5)
        state.Xi = np.random.default_rng(seed).uniform(0, 1, 3) * sub.xi_ub
        y = update_y(sub, state)
        assert np.all(y >= 0)
        val = transformed_value(sub, state.Xi, state.Theta, state.kappa_vals, y)
        assert val == pytest.approx(objective(sub, state.Xi, state.Theta, state.kappa_vals), rel=1e-12, abs=1e-15)
        a = rate_gap(state.Xi, state.Theta, state.kappa_vals, sub.P_m)
        assert np.all(y[a <= 0] == 0.0)


def test_update_xi_matches_dense_grid():
    cfg = SystemConfig(N=16, B=1, J=1, P=10.0)
    hits = 0
    for seed in range(30):
        sub = random_subproblem(np.random.default_rng(seed), 1, cfg, d_range=(1, 3))
        state = initial_state(sub, 0.5)
        state.y = update_y(sub, state)
        if state.y[0] == 0:
            continue
        hits += 1
        xi = update_xi(sub, state)[0]
        grid = np.linspace(0, sub.xi_ub[0], 10 ** 6)
        g = [transformed_value(sub, np.array([x]), state.Theta, state.kappa_vals, state.y) for x in grid[::100]]
        # coarse pass locates the cell, fine pass scans it at full density
        c = int(np.argmax(g)) * 100
        fine = grid[max(c - 100, 0): c + 101]
        gf = np.array([transformed_value(sub, np.array([x]), state.Theta, state.kappa_vals, state.y) for x in fine])
        best = fine[int(np.argmax(gf))]
        assert abs(xi - best) <= 2 * (grid[1] - grid[0])
        assert transformed_value(sub, np.array([xi]), state.Theta, state.kappa_vals, state.y) >= gf.max() - 1e-12
    assert hits >= 5


def test_update_xi_flat_keeps_incumbent(sub2):
    state = initial_state(sub2, 0.5)
    state.y = np.zeros(2)
    assert np.array_equal(update_xi(sub2, state), state.Xi)


# --- gradient -----------------------------------------------------------------------

def test_gradient_examples():
    g = gradient_theta(np.array([2.0]), np.array([0.25]), np.array([0.3]), 0.25)
    assert g[0] == pytest.approx(2.0 / ((1 + 0.5) * math.log(2)))
    kap = np.array([0.2, 0.3, 0.4])
    theta = np.array([0.1, 0.05, 0.1])
    g = gradient_theta(np.zeros(3), theta, kap, 0.25)
    den = kap + theta.sum() - theta
    ref = [(sum(1 / den[k] for k in range(3) if k != i)) / math.log(2) for i in range(3)]
    assert np.allclose(g, ref)


@pytest.mark.parametrize("K", [2, 3, 5])
def test_gradient_vs_finite_differences(K):
    rng = np.random.default_rng(K)
    for _ in range(20):
        sub = random_subproblem(rng, K)
        Theta = rng.dirichlet(np.ones(K)) * sub.P_m
        Xi = rng.uniform(0.05, 1.0, K) * sub.xi_ub
        kap = sub.kappa(float(rng.uniform(0.3, 1.0)))
        w = rng.uniform(0.5, 2.0, K)
        g = gradient_theta(Xi, Theta, kap, sub.P_m, w)
        fd = finite_difference_gradient(lambda t: d2_objective(Xi, t, kap, sub.P_m, w), Theta, h=1e-7)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


# --- projection ------------------------------------------------------------------------

def test_projection_examples():
    assert np.allclose(project_simplex([0.6, 0.6], 1.0), [0.5, 0.5])
    v = np.array([0.2, 0.3, 0.5])
    assert np.allclose(project_simplex(v, 1.0), v)
    v = np.array([1.0, -0.5, 0.1])
    assert np.allclose(project_simplex(v, 1.0), sort_projection(v, 1.0))
    assert np.allclose(project_simplex(v, 1.0), [0.95, 0.0, 0.05])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.floats(0.01, 5.0))
def test_projection_matches_sort_oracle(v, z):
    v = np.array(v)
    x = project_simplex(v, z)
    assert np.all(x >= 0)
    assert x.sum() == pytest.approx(z, abs=1e-10)
    assert np.allclose(x, sort_projection(v, z), atol=1e-9)


# --- projected gradient -------------------------------------------------------------------

def test_pg_single_user():
    r = update_theta_pg(np.array([3.0]), np.array([0.1]), np.array([0.5]), 0.25)
    assert np.allclose(r.Theta, [0.25]) and r.iterations == 0


def test_pg_from_stationary_point_is_unchanged():
    sub = random_subproblem(np.random.default_rng(2), 3)
    Xi = sub.xi_ub / 2
    kap = sub.kappa(0.5)
    first = update_theta_pg(Xi, np.full(3, sub.P_m / 3), kap, sub.P_m, SolverOptions(tol=1e-12))
    again = update_theta_pg(Xi, first.Theta, kap, sub.P_m, SolverOptions(tol=1e-12))
    assert np.allclose(again.Theta, first.Theta, atol=1e-6)
    assert again.value >= first.value - 1e-12


def test_pg_matches_grid_on_one_simplex():
    rng = np.random.default_rng(5)
    for _ in range(10):
        sub = random_subproblem(rng, 2)
        Xi = rng.uniform(0.2, 1.0, 2) * sub.xi_ub
        kap = sub.kappa(0.5)
        r = update_theta_pg(Xi, np.full(2, sub.P_m / 2), kap, sub.P_m)
        t = np.linspace(0, sub.P_m, 10 ** 5)
        vals = [d2_objective(Xi, np.array([a, sub.P_m - a]), kap, sub.P_m) for a in t[::10]]
        best = max(vals)
        assert r.value >= best - 1e-3
        assert np.all(np.diff(r.trace) >= -1e-12)
        assert r.stalled or pg_residual(Xi, r.Theta, kap, sub.P_m) <= 1e-3


def test_pg_terminates_near_stationarity():
    rng = np.random.default_rng(8)
    stalls = 0
    for _ in range(30):
        K = int(rng.integers(2, 6))
        sub = random_subproblem(rng, K)
        Xi = rng.uniform(0.1, 1.0, K) * sub.xi_ub
        kap = sub.kappa(float(rng.uniform(0.3, 1.0)))
        r = update_theta_pg(Xi, np.full(K, sub.P_m / K), kap, sub.P_m)
        stalls += r.stalled
        assert r.stalled or pg_residual(Xi, r.Theta, kap, sub.P_m) <= 1e-3
        assert np.all(r.Theta >= 0) and r.Theta.sum() == pytest.approx(sub.P_m, abs=1e-10)
    assert stalls <= 3


# --- AM, refinement and the outer solve ------------------------------------------------------

def test_am_single_user_one_round():
    sub = random_subproblem(np.random.default_rng(0), 1, d_range=(1, 2))
    st_ = solve_subproblem_am(sub, 0.5)
    assert st_.am_rounds <= 2
    assert np.allclose(st_.Theta, [sub.P_m])


def test_am_trace_monotone_and_state_invariants():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        sub = random_subproblem(rng, int(rng.integers(2, 7)))
        st_ = solve_subproblem_am(sub, 0.4)
        assert np.all(np.diff(st_.trace) >= -1e-9)
        assert np.all(st_.Xi >= 0) and np.all(st_.Xi <= st_.xi_ub * (1 + 1e-12))
        assert st_.Theta.sum() == pytest.approx(sub.P_m, abs=1e-10) and np.all(st_.Theta >= 0)
        assert np.all(st_.y >= 0)
        st_.check()


def test_maximize_xi_never_lowers_objective():
    for seed in range(10):
        sub = random_subproblem(np.random.default_rng(seed), 3)
        st_ = initial_state(sub, 0.5)
        before = objective(sub, st_.Xi, st_.Theta, st_.kappa_vals)
        st_ = maximize_xi(sub, st_, SolverOptions())
        assert objective(sub, st_.Xi, st_.Theta, st_.kappa_vals) >= before - 1e-12
        assert st_.alg1_iters[-1] <= 50


def test_refinement_reaches_target():
    opts = SolverOptions()
    done = 0
    for seed in range(20):
        sub = random_subproblem(np.random.default_rng(seed), 3)
        st_ = refine_epsilon_k(sub, 0.1, opts)
        act = active_users(sub, st_)
        p = achieved_sop(sub, st_)
        assert np.all(np.abs(p[act] - 0.1) <= opts.z + 1e-12)
        assert np.all((st_.epsilon_k >= 0.1) & (st_.epsilon_k <= 1.0))
        done += bool(np.any(act))
    assert done >= 10


def test_sop_nondecreasing_in_epsilon_k():
    sub = random_subproblem(np.random.default_rng(3), 2)
    Theta = np.array([0.3, 0.7]) * sub.P_m
    prev = -1.0
    for e in np.arange(0.1, 1.0, 0.1):
        kap = sub.kappa(e)
        p = sop_at(sub.beams, Theta, 1, sub.m, sub.gamma_e, sub.P_m, d_tilde(Theta, kap[1], 1))
        assert p >= prev - 1e-12
        prev = p


def _system(J=2, seed=0, eves=None, n=12):
    cfg = SystemConfig(N=16, B=1, J=J, P=10.0)
    rng = np.random.default_rng(seed)
    return build_system(cfg, rng.uniform(1, 20, n), eves if eves is not None else 10 / np.arange(1, J + 1), rng)


def test_solve_p2_single_eve():
    s = _system(J=1)
    sol = solve_p2(s.cfg, s.geometry, s.beams)
    assert sol.j_hat == 0 and sol.objective >= 0


def test_solve_p2_duplicate_eves_tie_to_lowest():
    s = _system(J=2, eves=[6.0, 6.0])
    sol = solve_p2(s.cfg, s.geometry, s.beams)
    assert sol.per_j[0] == sol.per_j[1]
    assert sol.j_hat == 0


def test_solve_p2_worker_count_does_not_change_result():
    s = _system(J=2, seed=4, n=4)
    a = solve_p2(s.cfg, s.geometry, s.beams, SolverOptions(workers=1))
    b = solve_p2(s.cfg, s.geometry, s.beams, SolverOptions(workers=4))
    assert a.objective == b.objective and a.j_hat == b.j_hat
    for x, y in zip(a.theta + a.xi + a.R, b.theta + b.xi + b.R):
        assert np.array_equal(x, y)


def test_solution_respects_cop_cap():
    s = _system(J=2, seed=7, n=16)
    sol = solve_p2(s.cfg, s.geometry, s.beams)
    for m, xi in enumerate(sol.xi):
        st_ = sol.states.get((m, sol.j_hat))
        for k in range(xi.size):
            cop = cop_at_solution(s.cfg, s.geometry, sol, m, k)
            assert cop <= s.cfg.delta + 1e-9
            if st_ is not None and xi[k] >= st_.xi_ub[k] * (1 - 1e-12):
                assert cop == pytest.approx(s.cfg.delta, abs=1e-6)
    # the rate term accounting matches the reported objective
    total = sum(float(np.sum(t)) for t in sol.user_rate_terms(s.cfg, s.geometry))
    assert total == pytest.approx(sol.objective, rel=1e-9, abs=1e-12)


def test_strict_mode_names_infeasible_users():
    # single-user clusters with a close Eve and a tiny epsilon push kappa below zero
    cfg = SystemConfig(N=16, B=1, J=1, P=100.0, epsilon=1e-300)
    s = build_system(cfg, np.array([3.0, 5.0]), [0.5], np.random.default_rng(1))
    loose = replace(SolverOptions(), refine=False)
    sol = solve_p2(s.cfg, s.geometry, s.beams, loose)
    assert sol.infeasible == [(0, 0, 0), (1, 0, 0)] and sol.objective == 0.0
    with pytest.raises(InfeasibleError, match=r"\(0, 0, 0\), \(1, 0, 0\)"):
        solve_p2(s.cfg, s.geometry, s.beams, replace(loose, strict=True))
