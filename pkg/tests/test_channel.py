import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from secnoma.channel import (
    SystemConfig,
    assign_users_to_clusters,
    build_geometry,
    build_system,
    generate_codebook_and_beamformers,
    nullspace_direction,
    quantization_angle,
    sample_channel_realization,
    sample_quantization_angle,
    sinr_eve,
    sinr_user,
    zero_forcing,
)
from secnoma.outage import SopInput, build_lambda


def desk(**kw):
    base = dict(N=16, B=2, J=3, P=10.0)
    base.update(kw)
    return SystemConfig(**base)


def test_config_invariants():
    cfg = desk()
    assert cfg.M == 4
    assert sum(cfg.cluster_power) == pytest.approx(1.0)
    assert cfg.quant_scale == pytest.approx(2 ** (-2 / 15))
    with pytest.raises(ValueError):
        desk(N=3)                          # M = 4 > N
    with pytest.raises(ValueError):
        desk(delta=1.0)
    with pytest.raises(ValueError):
        desk(epsilon=0.0)
    with pytest.raises(ValueError):
        desk(cluster_power=(0.5, 0.5, 0.1, 0.1))
    with pytest.raises(ValueError):
        desk(P=-1.0)


def test_codebook_m1_and_orthonormal():
    cfg = SystemConfig(N=4, B=0, J=1, P=1.0)
    b = generate_codebook_and_beamformers(cfg, np.random.default_rng(0))
    assert abs(np.vdot(b.codebook[:, 0], b.beamformers[:, 0])) == pytest.approx(1.0)
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((2, 2)) + 1j * np.random.default_rng(2).standard_normal((2, 2)))
    w = zero_forcing(q)
    for m in range(2):
        assert abs(np.vdot(q[:, m], w[:, m])) == pytest.approx(1.0, abs=1e-12)


def test_zero_forcing_on_seeded_draws():
    cfg = desk()
    for seed in range(100):
        b = generate_codebook_and_beamformers(cfg, np.random.default_rng(seed))
        assert b.zf_residual <= 1e-10
        assert np.allclose(np.linalg.norm(b.codebook, axis=0), 1.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(b.beamformers, axis=0), 1.0, atol=1e-12)


def test_assignment_examples():
    cb = np.eye(4, dtype=complex)
    assert assign_users_to_clusters(cb[:, 1], cb)[0] == 1
    g = np.array([0.0, 0.0, 0.0, 2.0 + 1j])
    assert assign_users_to_clusters(g, cb)[0] == 3
    # exact tie goes to the lower index
    assert assign_users_to_clusters(np.array([1, 1, 0, 0], complex), cb)[0] == 0


def test_assignment_matches_rescan_and_is_idempotent():
    cfg = desk()
    rng = np.random.default_rng(4)
    b = generate_codebook_and_beamformers(cfg, rng)
    g = rng.standard_normal((100, 16)) + 1j * rng.standard_normal((100, 16))
    got = assign_users_to_clusters(g, b.codebook)
    for u in range(100):
        scores = [abs(np.vdot(g[u], b.codebook[:, m])) / np.linalg.norm(g[u]) for m in range(4)]
        assert got[u] == int(np.argmax(scores))
    assert np.array_equal(got, assign_users_to_clusters(g, b.codebook))


def test_geometry_sorted_and_counts():
    cfg = desk()
    sys_ = build_system(cfg, np.random.default_rng(0).uniform(1, 100, 20), [10, 5, 10 / 3], np.random.default_rng(1))
    geo = sys_.geometry
    assert geo.total_users == 20
    for d, g in zip(geo.user_distances, geo.gamma_users):
        assert np.all(np.diff(d) > 0)
        assert np.allclose(g, 10.0 * d ** -2.5)
    assert np.allclose(geo.gamma_eves, 10.0 * np.array([10, 5, 10 / 3]) ** -2.5 / 10 ** 0.5)
    with pytest.raises(ValueError):
        build_geometry(cfg, [5.0, 5.0], [1, 2, 3], [0, 0])


def test_quantization_angle_examples():
    # B = 3, N = 4 is not a valid ZF system (M > N), so the raw sampler is used
    assert quantization_angle(4, 3, None, u=1.0) == pytest.approx(2 ** (-1.0))
    assert quantization_angle(4, 3, None, u=1e-300) < 1e-90
    s = quantization_angle(4, 3, np.random.default_rng(0), size=10 ** 6)
    cdf = lambda x: np.clip(2 ** 3 * np.asarray(x) ** 3, 0, 1)
    assert stats.kstest(s, cdf).statistic < 0.002


def test_realization_invariants():
    cfg = desk()
    rng = np.random.default_rng(3)
    sys_ = build_system(cfg, rng.uniform(1, 100, 20), [10, 5, 10 / 3], rng)
    r = sample_channel_realization(cfg, sys_.geometry, sys_.beams, rng)
    for m, e in enumerate(r.error_dir):
        if e.size:
            assert np.allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-12)
            assert np.max(np.abs(e @ sys_.beams.codebook[:, m].conj())) <= 1e-10
        assert np.all((r.sin2_beta[m] >= 0) & (r.sin2_beta[m] <= cfg.quant_scale))
    r2 = sample_channel_realization(cfg, sys_.geometry, sys_.beams, np.random.default_rng(9))
    r3 = sample_channel_realization(cfg, sys_.geometry, sys_.beams, np.random.default_rng(9))
    assert all(np.array_equal(a, b) for a, b in zip(r2.user_g, r3.user_g))
    assert np.array_equal(r2.eve_g, r3.eve_g)


def test_channel_norm_and_leakage_law():
    cfg = desk()
    rng = np.random.default_rng(8)
    b = generate_codebook_and_beamformers(cfg, rng)
    n = 10 ** 5
    g = (rng.standard_normal((n, 16)) + 1j * rng.standard_normal((n, 16))) * np.sqrt(0.5)
    assert np.mean(np.sum(np.abs(g) ** 2, axis=1)) == pytest.approx(16, rel=0.01)
    s = sample_quantization_angle(cfg, rng, size=n)
    e = nullspace_direction(b.codebook[:, 0], rng, n)
    prod = np.sum(np.abs(g) ** 2, axis=1) * s * np.abs(e @ b.beamformers[:, 1].conj()) ** 2
    assert prod.mean() == pytest.approx(cfg.quant_scale, rel=0.02)


@pytest.fixture
def small_system():
    cfg = desk(J=2)
    rng = np.random.default_rng(12)
    sys_ = build_system(cfg, rng.uniform(1, 30, 12), [4.0, 8.0], rng)
    r = sample_channel_realization(cfg, sys_.geometry, sys_.beams, rng)
    m = int(np.argmax(sys_.geometry.cluster_sizes))
    return cfg, sys_, r, m


def test_sinr_user_examples(small_system):
    cfg, sys_, r, m = small_system
    K = sys_.geometry.cluster_sizes[m]
    theta = np.full(K, cfg.cluster_power[m] / K)
    z = theta.copy(); z[0] = 0.0
    assert sinr_user(cfg, sys_.geometry, r, sys_.beams, z, m, 0) == 0.0
    # independent recomputation from raw vectors
    k = K - 1
    g, e, w = r.user_g[m][k], r.error_dir[m][k], sys_.beams.beamformers
    x = abs(g.conj() @ w[:, m]) ** 2
    y = np.linalg.norm(g) ** 2 * r.sin2_beta[m][k] * sum(abs(e.conj() @ w[:, v]) ** 2 for v in range(cfg.M) if v != m)
    ref = x * theta[k] / (x * theta[:k].sum() + cfg.cluster_power[m] * y + 1 / sys_.geometry.gamma_users[m][k])
    assert sinr_user(cfg, sys_.geometry, r, sys_.beams, theta, m, k) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(IndexError):
        sinr_user(cfg, sys_.geometry, r, sys_.beams, theta, m, K)


def test_sinr_user_noiseless_single_cluster():
    cfg = SystemConfig(N=4, B=0, J=1, P=1.0)
    rng = np.random.default_rng(0)
    sys_ = build_system(cfg, [1.0], [5.0], rng)
    r = sample_channel_realization(cfg, sys_.geometry, sys_.beams, rng)
    geo = sys_.geometry
    geo.gamma_users[0][:] = np.inf
    v = sinr_user(cfg, geo, r, sys_.beams, [1.0], 0, 0)
    assert np.isfinite(v) and v > 1e300


def test_sinr_eve_examples(small_system):
    cfg, sys_, r, m = small_system
    K = sys_.geometry.cluster_sizes[m]
    theta = np.full(K, cfg.cluster_power[m] / K)
    z = theta.copy(); z[1] = 0.0
    assert sinr_eve(cfg, sys_.geometry, r, sys_.beams, z, m, 1, 0) == 0.0
    # Eve inside span(w_m): no inter-cluster leakage
    w = sys_.beams.beamformers
    others = np.delete(w, m, axis=1)
    ge = r.eve_g[0] - others @ np.linalg.lstsq(others, r.eve_g[0], rcond=None)[0]
    from dataclasses import replace
    r0 = replace(r, eve_g=np.vstack([ge, r.eve_g[1]]))
    x = abs(ge.conj() @ w[:, m]) ** 2
    ref = x * theta[0] / (x * (theta.sum() - theta[0]) + 1 / sys_.geometry.gamma_eves[0])
    assert sinr_eve(cfg, sys_.geometry, r0, sys_.beams, theta, m, 0, 0) == pytest.approx(ref, rel=1e-10)


@given(st.floats(0.0, 3.0), st.integers(0, 10 ** 6))
def test_sinr_eve_matches_quadratic_form(D, seed):
    cfg = desk(J=2)
    rng = np.random.default_rng(seed)
    sys_ = build_system(cfg, rng.uniform(1, 30, 12), [4.0, 8.0], rng)
    r = sample_channel_realization(cfg, sys_.geometry, sys_.beams, rng)
    m = int(np.argmax(sys_.geometry.cluster_sizes))
    K = sys_.geometry.cluster_sizes[m]
    theta = rng.dirichlet(np.ones(K)) * cfg.cluster_power[m]
    j, k = 1, K - 1
    ge = sys_.geometry.gamma_eves[j]
    lam = build_lambda(SopInput(D, tuple(theta), k, ge, sys_.beams, m, cfg.cluster_power[m])).data
    g = r.eve_g[j]
    q = float(np.real(g.conj() @ lam @ g))
    t = 2 ** D - 1
    sinr = sinr_eve(cfg, sys_.geometry, r, sys_.beams, theta, m, k, j)
    proj = np.abs(sys_.beams.beamformers.conj().T @ g) ** 2
    den = proj[m] * (theta.sum() - theta[k]) + cfg.cluster_power[m] * (proj.sum() - proj[m]) + 1 / ge
    # g^H Lambda g - t = gamma_e * den * (SINR - t)
    assert q - t == pytest.approx(ge * den * (sinr - t), rel=1e-9, abs=1e-12)
