"""System construction: configuration, geometry, RVQ codebook, ZF beams and channel draws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mathkit import sample_complex_gaussian_vector


@dataclass(frozen=True)
class SystemConfig:
    """Static system parameters, all on a linear scale.

    ``cluster_power`` defaults to an equal split ``1/M`` per cluster.
    """

    N: int
    B: int
    J: int
    P: float
    alpha: float = 2.5
    sigma2_b: float = 1.0
    sigma2_e: float = 10 ** 0.5
    delta: float = 0.5
    epsilon: float = 0.1
    cluster_power: tuple = None
    mu_user: float = 1.0
    mu_eve: float = 1.0

    def __post_init__(self):
        if self.N < 1 or self.B < 0 or self.J < 1:
            raise ValueError("N and J must be positive and B non-negative")
        if self.M > self.N:
            raise ValueError(f"zero-forcing needs M <= N (M={self.M}, N={self.N})")
        if not (0.0 < self.delta < 1.0 and 0.0 < self.epsilon < 1.0):
            raise ValueError("delta and epsilon must lie in (0, 1)")
        if min(self.P, self.sigma2_b, self.sigma2_e, self.mu_user, self.mu_eve) <= 0:
            raise ValueError("powers, noise levels and fading variances must be positive")
        if self.cluster_power is None:
            object.__setattr__(self, "cluster_power", tuple([1.0 / self.M] * self.M))
        cp = tuple(float(p) for p in self.cluster_power)
        if len(cp) != self.M or min(cp) <= 0 or abs(sum(cp) - 1.0) > 1e-12:
            raise ValueError("cluster_power needs M positive entries summing to 1")
        object.__setattr__(self, "cluster_power", cp)

    @property
    def M(self) -> int:
        return 2 ** self.B

    @property
    def quant_scale(self) -> float:
        """Support edge 2^{-B/(N-1)} of sin^2(beta); also the interference Gamma scale."""
        if self.N < 2:
            return 1.0
        return 2.0 ** (-self.B / (self.N - 1))


@dataclass(frozen=True)
class NetworkGeometry:
    user_distances: list          # per cluster, ascending
    eve_distances: np.ndarray
    gamma_users: list             # per cluster, aligned with user_distances
    gamma_eves: np.ndarray
    user_ids: list = field(default=None)   # original user index for each clustered user

    @property
    def cluster_sizes(self) -> list:
        return [len(d) for d in self.user_distances]

    @property
    def total_users(self) -> int:
        return sum(self.cluster_sizes)


@dataclass(frozen=True)
class BeamformerSet:
    codebook: np.ndarray      # (N, M) columns are unit-norm codewords
    beamformers: np.ndarray   # (N, M) columns are unit-norm ZF beams

    @property
    def M(self) -> int:
        return self.codebook.shape[1]

    @property
    def N(self) -> int:
        return self.codebook.shape[0]

    @property
    def zf_residual(self) -> float:
        g = self.codebook.conj().T @ self.beamformers
        if g.shape[0] == 1:
            return 0.0
        return float(np.max(np.abs(g[~np.eye(g.shape[0], dtype=bool)])))

    def perp_matrix(self, m: int) -> np.ndarray:
        """Sum of w_v w_v^H over the other clusters' beams."""
        others = np.delete(self.beamformers, m, axis=1)
        return others @ others.conj().T


@dataclass(frozen=True)
class ChannelRealization:
    user_g: list        # per cluster (K_m, N) small-scale vectors
    sin2_beta: list     # per cluster (K_m,)
    error_dir: list     # per cluster (K_m, N) unit vectors in null(g_hat_m)
    eve_g: np.ndarray   # (J, N)


@dataclass(frozen=True)
class System:
    cfg: SystemConfig
    geometry: NetworkGeometry
    beams: BeamformerSet


def user_snr(cfg: SystemConfig, d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return cfg.P * cfg.mu_user ** 2 * d ** (-cfg.alpha) / cfg.sigma2_b


def eve_snr(cfg: SystemConfig, d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return cfg.P * cfg.mu_eve ** 2 * d ** (-cfg.alpha) / cfg.sigma2_e


def zero_forcing(codebook: np.ndarray) -> np.ndarray:
    """Normalised columns of G (G^H G)^{-1}; column m is orthogonal to every other codeword."""
    gram = codebook.conj().T @ codebook
    w = codebook @ np.linalg.inv(gram)
    return w / np.linalg.norm(w, axis=0)


def generate_codebook_and_beamformers(cfg: SystemConfig, rng: np.random.Generator,
                                      max_retries: int = 10) -> BeamformerSet:
    # i.i.d. Gaussian codewords, normalised (standard RVQ)
    for _ in range(max_retries):
        g = sample_complex_gaussian_vector(cfg.N, rng, size=cfg.M).T
        g = g / np.linalg.norm(g, axis=0)
        if np.linalg.matrix_rank(g, tol=1e-8) < cfg.M:
            continue
        beams = BeamformerSet(g, zero_forcing(g))
        if beams.zf_residual <= 1e-10:
            return beams
    raise np.linalg.LinAlgError(f"codebook rank deficient after {max_retries} draws")


def assign_users_to_clusters(vectors, codebook: np.ndarray) -> np.ndarray:
    """Index of the codeword with the largest normalised inner product, per user (row)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=complex))
    if codebook.shape[1] == 0:
        raise ValueError("empty codebook")
    corr = np.abs(vectors.conj() @ codebook) / np.linalg.norm(vectors, axis=1, keepdims=True)
    return np.argmax(corr, axis=1)   # argmax keeps the lowest index on ties


def build_geometry(cfg: SystemConfig, user_distances, eve_distances, assignment) -> NetworkGeometry:
    user_distances = np.asarray(user_distances, dtype=float)
    assignment = np.asarray(assignment, dtype=int)
    dists, gammas, ids = [], [], []
    for m in range(cfg.M):
        members = np.flatnonzero(assignment == m)
        members = members[np.argsort(user_distances[members], kind="stable")]
        d = user_distances[members]
        if d.size > 1 and np.any(np.diff(d) <= 0):
            raise ValueError(f"cluster {m} has coincident user distances")
        dists.append(d)
        gammas.append(user_snr(cfg, d))
        ids.append(members)
    eve_distances = np.asarray(eve_distances, dtype=float)
    if eve_distances.size != cfg.J:
        raise ValueError(f"expected {cfg.J} eavesdropper distances, got {eve_distances.size}")
    return NetworkGeometry(dists, eve_distances, gammas, eve_snr(cfg, eve_distances), ids)


def build_system(cfg: SystemConfig, user_distances, eve_distances, rng: np.random.Generator) -> System:
    """Draw codebook and beams, cluster users by their small-scale vectors, and fix SNRs."""
    beams = generate_codebook_and_beamformers(cfg, rng)
    user_distances = np.asarray(user_distances, dtype=float)
    g = sample_complex_gaussian_vector(cfg.N, rng, size=user_distances.size) * cfg.mu_user
    assignment = assign_users_to_clusters(g, beams.codebook)
    return System(cfg, build_geometry(cfg, user_distances, eve_distances, assignment), beams)


def quantization_angle(N: int, B: int, rng: np.random.Generator, size=None, u=None):
    """Inverse-CDF draw of sin^2(beta) with CDF 2^B s^{N-1} on [0, 2^{-B/(N-1)}]."""
    if N < 2:
        raise ValueError("quantization angle needs N >= 2")
    if u is None:
        u = 1.0 - rng.random(size)   # (0, 1]
    return np.asarray(u) ** (1.0 / (N - 1)) * 2.0 ** (-B / (N - 1))


def sample_quantization_angle(cfg: SystemConfig, rng: np.random.Generator, size=None, u=None):
    return quantization_angle(cfg.N, cfg.B, rng, size, u)


def nullspace_direction(g_hat: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Isotropic unit vectors orthogonal to the unit vector ``g_hat`` (rows)."""
    z = sample_complex_gaussian_vector(g_hat.size, rng, size=size)
    z = z - np.outer(z @ g_hat.conj(), g_hat)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_channel_realization(cfg: SystemConfig, geometry: NetworkGeometry, beams: BeamformerSet,
                               rng: np.random.Generator) -> ChannelRealization:
    user_g, sin2, err = [], [], []
    for m, k_m in enumerate(geometry.cluster_sizes):
        user_g.append(sample_complex_gaussian_vector(cfg.N, rng, size=k_m) * cfg.mu_user)
        sin2.append(sample_quantization_angle(cfg, rng, size=k_m))
        err.append(nullspace_direction(beams.codebook[:, m], rng, k_m))
    eve_g = sample_complex_gaussian_vector(cfg.N, rng, size=cfg.J) * cfg.mu_eve
    return ChannelRealization(user_g, sin2, err, eve_g)


_BIG = np.finfo(float).max


def sinr_user(cfg: SystemConfig, geometry: NetworkGeometry, realization: ChannelRealization,
              beams: BeamformerSet, theta, m: int, k: int) -> float:
    """SINR of user k in cluster m after SIC, with residual inter-cluster leakage."""
    theta = np.asarray(theta, dtype=float)
    if not (0 <= m < cfg.M and 0 <= k < geometry.cluster_sizes[m]):
        raise IndexError(f"user ({m}, {k}) out of range")
    mu = cfg.mu_user
    g = realization.user_g[m][k]
    gain = abs(np.vdot(g, beams.beamformers[:, m]) / mu) ** 2
    e = realization.error_dir[m][k]
    leak = np.sum(np.abs(np.delete(beams.beamformers, m, axis=1).conj().T @ e) ** 2)
    resid = cfg.cluster_power[m] * np.sum(np.abs(g / mu) ** 2) * realization.sin2_beta[m][k] * leak
    num = gain * theta[k]
    den = gain * theta[:k].sum() + resid + 1.0 / geometry.gamma_users[m][k]
    if num == 0.0:
        return 0.0
    return float(num / den) if den > 0 else _BIG


def sinr_eve(cfg: SystemConfig, geometry: NetworkGeometry, realization: ChannelRealization,
             beams: BeamformerSet, theta, m: int, k: int, j: int) -> float:
    """SINR at Eve j for user k of cluster m; Eves cannot run SIC."""
    theta = np.asarray(theta, dtype=float)
    if not (0 <= m < cfg.M and 0 <= k < theta.size and 0 <= j < cfg.J):
        raise IndexError(f"index ({m}, {k}, {j}) out of range")
    ge = realization.eve_g[j] / cfg.mu_eve
    proj = np.abs(beams.beamformers.conj().T @ ge) ** 2
    gain = proj[m]
    inter = cfg.cluster_power[m] * (proj.sum() - gain)
    num = gain * theta[k]
    den = gain * (theta.sum() - theta[k]) + inter + 1.0 / geometry.gamma_eves[j]
    if num == 0.0:
        return 0.0
    return float(num / den) if den > 0 else _BIG
