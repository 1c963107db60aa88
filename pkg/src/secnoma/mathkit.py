"""Numerical building blocks shared by the channel, outage and optimizer modules.

Everything here is a pure function of its arguments; samplers take an explicit
``numpy.random.Generator`` so that streams are never shared implicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

_INV_E = math.exp(-1.0)


class BisectionError(ValueError):
    """Raised when a bracket has no sign change."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine exhausts its iteration cap."""


# ---------------------------------------------------------------------------
# Lambert W, principal branch
# ---------------------------------------------------------------------------

def _halley_w(x: float, w: float, max_iter: int = 60) -> float:
    for _ in range(max_iter):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            break
        step = f / denom
        w -= step
        if abs(step) <= 4e-16 * (1.0 + abs(w)):
            break
    return w


def lambert_w0(x: float) -> float:
    """Principal branch W0 of the Lambert W function for real ``x >= -1/e``.

    Halley iteration from ``ln(1 + x)`` for ``x >= 0`` and from the branch-point
    series for ``-1/e <= x < 0``.
    """
    x = float(x)
    if math.isnan(x):
        raise ValueError("lambert_w0 of NaN")
    if x < -_INV_E:
        # one ulp of slack for arguments computed as -exp(-1)
        if x < -_INV_E * (1.0 + 4e-16):
            raise ValueError(f"lambert_w0 undefined for x={x!r} < -1/e")
        return -1.0
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf
    if x > 1e300:
        return lambert_w0_from_log(math.log(x))
    if x >= 0.0:
        w = math.log1p(x)
    else:
        p2 = 2.0 * (math.e * x + 1.0)
        if p2 <= 0.0:
            return -1.0
        p = math.sqrt(p2)
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
        if p < 1e-5:
            return w
    return _halley_w(x, w)


def lambert_w0_from_log(log_x: float) -> float:
    """W0(exp(log_x)) without forming exp(log_x); usable when that overflows."""
    if log_x < 500.0:
        return lambert_w0(math.exp(log_x))
    # solve w + ln w = log_x by Newton, well conditioned for large log_x
    w = log_x - math.log(log_x)
    for _ in range(50):
        f = w + math.log(w) - log_x
        step = f / (1.0 + 1.0 / w)
        w -= step
        if abs(step) <= 4e-16 * w:
            break
    return w


# ---------------------------------------------------------------------------
# Hermitian eigenproblem (cyclic complex Jacobi)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HermitianMatrix:
    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("Hermitian matrix must be square")
        scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
        if a.size and np.max(np.abs(a - a.conj().T)) > 1e-12 * scale:
            raise ValueError("matrix is not Hermitian")
        object.__setattr__(self, "data", a)

    @property
    def dimension(self) -> int:
        return self.data.shape[0]


def hermitian_eigenvalues(A, eigenvectors: bool = False, max_sweeps: int = 100):
    """Eigenvalues of a Hermitian matrix in descending order.

    Cyclic Jacobi with complex plane rotations. With ``eigenvectors=True`` a
    ``(values, V)`` pair is returned with ``A = V diag(values) V^H``.
    """
    if not isinstance(A, HermitianMatrix):
        A = HermitianMatrix(A)
    a = A.data.copy()
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    norm = np.linalg.norm(a)
    if n == 1 or norm == 0.0:
        vals = np.real(np.diag(a)).copy()
        order = np.argsort(-vals, kind="stable")
        return (vals[order], v[:, order]) if eigenvectors else vals[order]

    tiny = 1e-300
    for sweep in range(max_sweeps):
        off = np.linalg.norm(a[~np.eye(n, dtype=bool)])
        if off <= 1e-15 * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-18 * norm or mag < tiny:
                    continue
                phase = apq / mag
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                # phase-align a_pq, then a real rotation; (J^H A J)_pq = 0
                j = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]], dtype=complex)
                idx = [p, q]
                a[:, idx] = a[:, idx] @ j
                a[idx, :] = j.conj().T @ a[idx, :]
                a[p, q] = 0.0
                a[q, p] = 0.0
                v[:, idx] = v[:, idx] @ j
    else:
        raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")

    vals = np.real(np.diag(a)).copy()
    order = np.argsort(-vals, kind="stable")
    if eigenvectors:
        return vals[order], v[:, order]
    return vals[order]


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_complex_gaussian_vector(n: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """i.i.d. CN(0, 1) entries: real and imaginary parts each have variance 1/2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    shape = (n,) if size is None else tuple(np.atleast_1d(size)) + (n,)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)


def sample_gamma(shape: float, scale: float, rng: np.random.Generator, size=None):
    if not shape > 0:
        raise ValueError(f"gamma shape must be positive, got {shape}")
    if not scale > 0:
        raise ValueError(f"gamma scale must be positive, got {scale}")
    return rng.gamma(shape, scale, size=size)


# ---------------------------------------------------------------------------
# Root finding and differentiation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


def bisect(f: Callable[[float], float], bracket: RootBracket) -> float:
    """Root of a monotone ``f`` inside ``bracket``.

    Stops once the interval is narrower than ``tol`` or ``f`` hits zero exactly.
    """
    lo, hi = bracket.lo, bracket.hi
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise BisectionError(f"no sign change on [{lo}, {hi}]: f={flo:.3g}, {fhi:.3g}")
    for _ in range(bracket.max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= bracket.tol or mid <= lo or mid >= hi:
            return mid
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    if hi - lo <= bracket.tol:
        return 0.5 * (lo + hi)
    raise ConvergenceError(f"bisection did not reach tol={bracket.tol} in {bracket.max_iter} halvings")


def bisect_many(f: Callable[[np.ndarray], np.ndarray], lo, hi, rtol: float = 1e-13,
                max_iter: int = 200) -> np.ndarray:
    """Elementwise bisection for decreasing ``f``: f(lo) > 0 >= f(hi) is assumed per entry.

    Stops per entry once hi - lo <= rtol * hi; all entries share one vectorised call of ``f``.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    if np.any(lo > hi):
        raise ValueError("bisect_many requires lo <= hi")
    for _ in range(max_iter):
        open_ = hi - lo > rtol * np.abs(hi)
        if not np.any(open_):
            break
        mid = 0.5 * (lo + hi)
        pos = f(mid) > 0
        lo = np.where(open_ & pos, mid, lo)
        hi = np.where(open_ & ~pos, mid, hi)
    return 0.5 * (lo + hi)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not h > 0:
        raise ValueError("h must be positive")
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        grad.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad
