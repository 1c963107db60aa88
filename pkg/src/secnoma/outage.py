"""Connection and secrecy outage: closed forms, Monte Carlo estimators, and the
Bernstein-type tightening used to fix the redundancy rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import BeamformerSet, nullspace_direction
from .mathkit import (
    HermitianMatrix,
    hermitian_eigenvalues,
    sample_complex_gaussian_vector,
    sample_gamma,
)

_EXP_CLAMP = 700.0
_CHUNK = 100_000


class InfeasibleError(ValueError):
    """The tightened secrecy constraint has a nonpositive denominator."""


@dataclass(frozen=True)
class MCEstimate:
    p: float
    stderr: float
    n: int

    def agrees(self, value: float, k: float = 3.0) -> bool:
        """|p - value| <= k standard errors.

        The error is the larger of the empirical one and the binomial error under
        the hypothesis p = value, so an all-miss run at p = 1e-9 is not a rejection.
        """
        v = min(max(float(value), 0.0), 1.0)
        se = max(self.stderr, math.sqrt(v * (1.0 - v) / self.n))
        return abs(value - self.p) <= k * se + 1e-15


def _estimate(hits: int, n: int) -> MCEstimate:
    p = hits / n
    return MCEstimate(p, math.sqrt(max(p * (1.0 - p), 0.0) / n), n)


def _chunks(n: int):
    while n > 0:
        c = min(n, _CHUNK)
        yield c
        n -= c


# ---------------------------------------------------------------------------
# Connection outage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CopInput:
    R: float
    theta: tuple
    k: int          # 0-based position in the SIC order
    gamma: float
    P_m: float
    M: int
    B: int
    N: int

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if self.R < 0:
            raise ValueError("rate must be non-negative")
        if not 0 <= self.k < len(self.theta):
            raise IndexError(f"user {self.k} out of range")
        if self.gamma <= 0 or self.P_m <= 0:
            raise ValueError("gamma and P_m must be positive")

    @property
    def scale(self) -> float:
        return 2.0 ** (-self.B / (self.N - 1)) if self.N > 1 else 1.0

    @property
    def threshold(self) -> float:
        """I = (2^R - 1)/den, or inf when den <= 0."""
        t = 2.0 ** self.R - 1.0
        den = self.theta[self.k] - t * sum(self.theta[: self.k])
        if t == 0.0:
            return 0.0
        return t / den if den > 0 else math.inf


def cop_from_threshold(I: float, gamma: float, P_m: float, M: int, scale: float) -> float:
    if I <= 0.0:
        return 0.0
    if math.isinf(I):
        return 1.0
    log_keep = -min(I / (2.0 * gamma), _EXP_CLAMP) + (1 - M) * math.log1p(I * P_m * scale / 2.0)
    return min(max(-math.expm1(log_keep), 0.0), 1.0)


def cop_closed_form(cin: CopInput) -> float:
    return cop_from_threshold(cin.threshold, cin.gamma, cin.P_m, cin.M, cin.scale)


def cop_monte_carlo(cin: CopInput, samples: int, rng: np.random.Generator) -> MCEstimate:
    """Empirical Pr{X < I (P_m Y + 1/gamma)} with X ~ Exp(mean 2), Y ~ Gamma(M-1, scale)."""
    if samples < 1:
        raise ValueError("samples must be positive")
    I = cin.threshold
    if I == 0.0:
        return MCEstimate(0.0, 0.0, samples)
    if math.isinf(I):
        return MCEstimate(1.0, 0.0, samples)
    hits = 0
    for n in _chunks(samples):
        x = rng.exponential(2.0, n)
        y = sample_gamma(cin.M - 1, cin.scale, rng, n) if cin.M > 1 else np.zeros(n)
        hits += int(np.count_nonzero(x < I * (cin.P_m * y + 1.0 / cin.gamma)))
    return _estimate(hits, samples)


def cop_monte_carlo_vector(cin: CopInput, beams: BeamformerSet, m: int, samples: int,
                           rng: np.random.Generator) -> MCEstimate:
    """Outage frequency of R > log2(1 + rho) with rho built from sampled channel vectors.

    g ~ CN(0, I_N), sin^2(beta) from its CDF, e isotropic in null(g_hat_m).
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    t = 2.0 ** cin.R - 1.0
    if t == 0.0:
        return MCEstimate(0.0, 0.0, samples)
    if math.isinf(cin.threshold):
        return MCEstimate(1.0, 0.0, samples)
    n_ant = beams.N
    w_m = beams.beamformers[:, m]
    w_other = np.delete(beams.beamformers, m, axis=1)
    below = sum(cin.theta[: cin.k])
    hits = 0
    for n in _chunks(samples):
        g = sample_complex_gaussian_vector(n_ant, rng, size=n)
        x = np.abs(g.conj() @ w_m) ** 2
        sin2 = (1.0 - rng.random(n)) ** (1.0 / (n_ant - 1)) * cin.scale
        e = nullspace_direction(beams.codebook[:, m], rng, n)
        leak = np.sum(np.abs(e.conj() @ w_other) ** 2, axis=1)
        y = np.sum(np.abs(g) ** 2, axis=1) * sin2 * leak
        rho = x * cin.theta[cin.k] / (x * below + cin.P_m * y + 1.0 / cin.gamma)
        hits += int(np.count_nonzero(rho < t))
    return _estimate(hits, samples)


# ---------------------------------------------------------------------------
# Secrecy outage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SopInput:
    D: float
    theta: tuple
    k: int
    gamma_e: float
    beams: BeamformerSet
    m: int
    P_m: float

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if self.D < 0:
            raise ValueError("redundancy rate must be non-negative")
        if not 0 <= self.k < len(self.theta):
            raise IndexError(f"user {self.k} out of range")
        if not 0 <= self.m < self.beams.M:
            raise IndexError(f"cluster {self.m} out of range")

    @property
    def t(self) -> float:
        return 2.0 ** self.D - 1.0

    def coefficients(self) -> np.ndarray:
        """Weights c with Lambda = sum_v c_v w_v w_v^H, beam m first."""
        others = sum(self.theta) - self.theta[self.k]
        c = np.full(self.beams.M, -self.gamma_e * self.P_m * self.t)
        c[0] = self.gamma_e * (self.theta[self.k] - self.t * others)
        return c

    def ordered_beams(self) -> np.ndarray:
        w = self.beams.beamformers
        return np.column_stack([w[:, self.m], np.delete(w, self.m, axis=1)])


def build_lambda(sin: SopInput) -> HermitianMatrix:
    w = sin.beams.beamformers
    w_m = w[:, sin.m][:, None]
    others = sum(sin.theta) - sin.theta[sin.k]
    lam = sin.gamma_e * (sin.theta[sin.k] - sin.t * others) * (w_m @ w_m.conj().T)
    lam = lam - sin.gamma_e * sin.P_m * sin.t * sin.beams.perp_matrix(sin.m)
    lam = 0.5 * (lam + lam.conj().T)
    return HermitianMatrix(lam)


def lambda_trace(sin: SopInput) -> float:
    """Tr(Lambda) from the beam traces: Tr(W_m) = 1, Tr(W_perp) = M - 1 for unit beams."""
    w = sin.beams.beamformers
    tr_m = float(np.sum(np.abs(w[:, sin.m]) ** 2))
    tr_perp = float(np.sum(np.abs(w) ** 2)) - tr_m
    others = sum(sin.theta) - sin.theta[sin.k]
    return sin.gamma_e * ((sin.theta[sin.k] - sin.t * others) * tr_m - sin.P_m * sin.t * tr_perp)


def lambda_eigenvalues(sin: SopInput, reduced: bool = True) -> np.ndarray:
    """Eigenvalues of Lambda, descending.

    ``reduced`` works on the M x M matrix L^H diag(c) L with U^H U = L L^H, which
    carries every nonzero eigenvalue; the N - M zeros are appended.
    """
    if not reduced:
        return hermitian_eigenvalues(build_lambda(sin))
    u = sin.ordered_beams()
    chol = np.linalg.cholesky(u.conj().T @ u)
    small = chol.conj().T @ (sin.coefficients()[:, None] * chol)
    vals = hermitian_eigenvalues(0.5 * (small + small.conj().T))
    vals = np.concatenate([vals, np.zeros(u.shape[0] - u.shape[1])])
    return np.sort(vals)[::-1]


def quadratic_form_tail(eigs, t: float) -> float:
    """Pr{g^H Lambda g > t} for g ~ CN(0, I) from the eigenvalues of Lambda."""
    lam = np.asarray(eigs, dtype=float).copy()
    if lam.size == 0:
        return 0.0
    scale = float(np.max(np.abs(lam)))
    if scale == 0.0:
        return 0.0
    lam[np.abs(lam) < 1e-12 * scale] = 0.0
    lam = np.sort(lam)[::-1]
    pos = lam[lam > 0]
    if pos.size == 0:
        return 0.0
    if t <= 0.0 and lam.min() >= 0.0:
        return 1.0
    # spread near-coincident positives so the partial-fraction products stay finite;
    # a pair costs ~1e-7 accuracy, a triple would lose everything to cancellation.
    # Lambda = U diag(c) U^H has at most one positive eigenvalue, so neither occurs there.
    run = 1
    for idx in range(1, pos.size):
        if abs(pos[idx] - pos[idx - 1]) <= 1e-8 * pos[idx - 1]:
            run += 1
            if run > 2:
                raise ValueError("positive eigenvalue of multiplicity > 2 is not supported")
            pos[idx] = pos[idx] * (1.0 - 1e-9 * idx)
        else:
            run = 1
    rest = lam[lam <= 0]
    total = 0.0
    for i, li in enumerate(pos):
        others = np.concatenate([np.delete(pos, i), rest])
        # (li - lv)/li keeps the gap exact for jittered pairs; 1 - lv/li would not
        ratio = (li - others) / li
        log_term = -np.sum(np.log(np.abs(ratio)))
        sign = np.prod(np.sign(ratio))
        total += sign * math.exp(max(min(log_term - t / li, _EXP_CLAMP), -_EXP_CLAMP))
    return min(max(total, 0.0), 1.0)


def sop_closed_form(sin: SopInput, reduced: bool = True) -> float:
    return quadratic_form_tail(lambda_eigenvalues(sin, reduced=reduced), sin.t)


def sop_monte_carlo(sin: SopInput, samples: int, rng: np.random.Generator) -> MCEstimate:
    """Empirical Pr{g^H Lambda g > 2^D - 1} over g ~ CN(0, I_N)."""
    if samples < 1:
        raise ValueError("samples must be positive")
    lam = build_lambda(sin).data
    n_ant = lam.shape[0]
    hits = 0
    for n in _chunks(samples):
        g = sample_complex_gaussian_vector(n_ant, rng, size=n)
        q = np.real(np.einsum("ni,ij,nj->n", g.conj(), lam, g, optimize=True))
        hits += int(np.count_nonzero(q > sin.t))
    return _estimate(hits, samples)


def sop_at(beams: BeamformerSet, theta, k: int, m: int, gamma_e: float, P_m: float, D: float) -> float:
    return sop_closed_form(SopInput(D, tuple(theta), k, gamma_e, beams, m, P_m))


# ---------------------------------------------------------------------------
# Bernstein-type tightening
# ---------------------------------------------------------------------------

def kappa(beams: BeamformerSet, gamma_e: float, P_m: float, m: int, epsilon_k: float) -> float:
    if not 0.0 < epsilon_k <= 1.0:
        raise ValueError(f"epsilon_k must lie in (0, 1], got {epsilon_k}")
    w = beams.beamformers
    tr_m = float(np.sum(np.abs(w[:, m]) ** 2))
    others = np.delete(w, m, axis=1)
    tr_perp = float(np.sum(np.abs(others) ** 2))
    # ||W_perp||_F^2 = sum over pairs |w_v^H w_u|^2
    fro_perp = float(np.linalg.norm(others.conj().T @ others)) if others.size else 0.0
    L = math.log(1.0 / epsilon_k)
    r = math.sqrt(2.0 * L)
    num = 1.0 / gamma_e + P_m * tr_perp - P_m * r * fro_perp
    return num / ((1.0 + L + r) * tr_m)


def d_tilde(theta, kappa_val: float, k: int) -> float:
    theta = np.asarray(theta, dtype=float)
    den = kappa_val + theta.sum() - theta[k]
    if den <= 0.0:
        raise InfeasibleError(f"kappa + interference = {den:.3g} <= 0 for user {k}")
    return math.log2(1.0 + theta[k] / den)
