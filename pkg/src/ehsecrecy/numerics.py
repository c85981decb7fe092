"""Numerical kernel: special functions, quadrature, root finding, dense solves.

Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import BracketError, ConvergenceError, DomainError, SingularMatrixError

EULER_GAMMA = 0.57721566490153286061
_EPS = 2.220446049250313e-16
_TINY = 1e-300


@dataclass(frozen=True)
class Tolerance:
    rel: float = 1e-12
    abs: float = 1e-15
    max_iter: int = 200_000

    def __post_init__(self):
        if not self.rel > 0:
            raise DomainError(f"rel tolerance must be positive, got {self.rel}")
        if not self.abs >= 0:
            raise DomainError(f"abs tolerance must be non-negative, got {self.abs}")
        if self.max_iter < 1:
            raise DomainError(f"max_iter must be >= 1, got {self.max_iter}")


DEFAULT_TOL = Tolerance()


# ---------------------------------------------------------------------------
# Exponential integral
# ---------------------------------------------------------------------------

def _e1_series(x):
    # E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    total = 0.0
    term = 1.0
    k = 1
    while True:
        term *= -x / k
        contrib = term / k
        total += contrib
        if abs(contrib) < _EPS * abs(total) or k > 500:
            break
        k += 1
    return -EULER_GAMMA - math.log(x) - total


def _scaled_e1_cf(x):
    # Lentz continued fraction for exp(x) * E1(x), valid for x > 1.
    b = x + 1.0
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ConvergenceError(f"E1 continued fraction did not converge at x={x}")


def exp_integral_ei(z: float) -> float:
    """Exponential integral Ei(z) for negative real ``z``.

    Ei(z) = -E1(-z). Uses the power series for |z| <= 1 and a continued
    fraction beyond.
    """
    if not z < 0:
        raise DomainError(f"exp_integral_ei needs z < 0, got {z}")
    x = -z
    if x <= 1.0:
        return -_e1_series(x)
    return -_scaled_e1_cf(x) * math.exp(-x)


def scaled_exp_integral_ei(z: float) -> float:
    """``exp(-z) * Ei(z)`` for z < 0, finite even when exp(-z) overflows."""
    if not z < 0:
        raise DomainError(f"scaled_exp_integral_ei needs z < 0, got {z}")
    x = -z
    if x <= 1.0:
        return -math.exp(x) * _e1_series(x)
    return -_scaled_e1_cf(x)


# ---------------------------------------------------------------------------
# Incomplete gamma
# ---------------------------------------------------------------------------

def _lower_gamma_series(a, x):
    # gamma(a, x) = x^a e^-x sum_n x^n / (a (a+1) ... (a+n))
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x))
    raise ConvergenceError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _upper_gamma_cf(a, x):
    # Lentz continued fraction for Gamma(a, x), x >= a + 1.
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * math.exp(-x + a * math.log(x))
    raise ConvergenceError(f"incomplete gamma fraction did not converge (a={a}, x={x})")


def _check_gamma_args(m, z):
    if not (m >= 1 and math.isfinite(m)):
        raise DomainError(f"gamma_upper needs finite m >= 1, got {m}")
    if not z >= 0:
        raise DomainError(f"gamma_upper needs z >= 0, got {z}")


def gamma_upper(m: float, z: float) -> float:
    """Upper incomplete gamma Gamma(m, z), not regularized."""
    _check_gamma_args(m, z)
    if z == 0:
        return math.gamma(m)
    if math.isinf(z):
        return 0.0
    if z < m + 1.0:
        return math.gamma(m) - _lower_gamma_series(m, z)
    return _upper_gamma_cf(m, z)


def gamma_lower_regularized(m: float, z: float) -> float:
    """P(m, z) = gamma(m, z) / Gamma(m), the Gamma(m, 1) CDF at z."""
    _check_gamma_args(m, z)
    if z == 0:
        return 0.0
    if math.isinf(z):
        return 1.0
    if z < m + 1.0:
        return _lower_gamma_series(m, z) / math.gamma(m)
    return 1.0 - _upper_gamma_cf(m, z) / math.gamma(m)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def _simpson(fa, fm, fb, width):
    return width * (fa + 4.0 * fm + fb) / 6.0


def integrate(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: Tolerance = DEFAULT_TOL,
) -> float:
    """Adaptive Simpson quadrature of ``f`` over [lo, hi].

    ``hi`` may be ``math.inf``; the half line is mapped onto [0, 1) with
    x = lo + t / (1 - t), and the integrand is assumed to vanish at infinity.
    Each accepted panel is Richardson-corrected. Raises ConvergenceError once
    more than ``tol.max_iter`` panel splits have been made.
    """
    if hi < lo:
        return -integrate(f, hi, lo, tol)
    if hi == lo:
        return 0.0
    if math.isinf(hi):
        def g(t):
            if t >= 1.0:
                return 0.0
            s = 1.0 - t
            return f(lo + t / s) / (s * s)
        return integrate(g, 0.0, 1.0, tol)

    # Seed with a handful of panels so narrow features are not skipped.
    n0 = 8
    xs = [lo + (hi - lo) * i / (2 * n0) for i in range(2 * n0 + 1)]
    fs = [f(x) for x in xs]
    coarse = 0.0
    stack = []
    for i in range(n0):
        a, m, b = xs[2 * i], xs[2 * i + 1], xs[2 * i + 2]
        fa, fm, fb = fs[2 * i], fs[2 * i + 1], fs[2 * i + 2]
        whole = _simpson(fa, fm, fb, b - a)
        coarse += whole
        stack.append((a, b, fa, fm, fb, whole))

    target = max(tol.abs, tol.rel * abs(coarse))
    span = hi - lo
    total = 0.0
    comp = 0.0  # Kahan compensation
    splits = 0
    while stack:
        a, b, fa, fm, fb, whole = stack.pop()
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = f(lm)
        frm = f(rm)
        left = _simpson(fa, flm, fm, m - a)
        right = _simpson(fm, frm, fb, b - m)
        diff = left + right - whole
        eps = target * (b - a) / span
        if abs(diff) <= 15.0 * eps or (b - a) <= 8.0 * _EPS * max(abs(a), abs(b), 1.0):
            y = left + right + diff / 15.0 - comp
            t = total + y
            comp = (t - total) - y
            total = t
            continue
        splits += 1
        if splits > tol.max_iter:
            raise ConvergenceError(
                f"adaptive quadrature exceeded {tol.max_iter} subdivisions on [{lo}, {hi}]"
            )
        stack.append((a, m, fa, flm, fm, left))
        stack.append((m, b, fm, frm, fb, right))
    return total


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------

def bisect(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: Tolerance = Tolerance(rel=1e-14, abs=0.0, max_iter=2000),
) -> float:
    """Root of a monotone function on [lo, hi] by bisection."""
    flo = f(lo)
    fhi = f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise BracketError(f"f({lo})={flo} and f({hi})={fhi} have the same sign")
    for _ in range(tol.max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol.abs or (hi - lo) <= tol.rel * abs(mid):
            return mid
        if mid <= lo or mid >= hi:  # interval at floating-point resolution
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not converge within {tol.max_iter} steps")


# ---------------------------------------------------------------------------
# Dense linear systems
# ---------------------------------------------------------------------------

def solve_linear(A, b) -> np.ndarray:
    """Solve A x = b by LU with partial pivoting.

    Raises SingularMatrixError when a pivot falls below 1e-13 times the
    largest entry of A. One step of iterative refinement is applied if the
    residual exceeds 1e-9 (1 + |b|_inf).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"solve_linear needs a square matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise DomainError(f"dimension mismatch: A is {A.shape}, b is {b.shape}")
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    if scale == 0.0:
        raise SingularMatrixError("matrix is identically zero")
    with warnings.catch_warnings():
        # Exactly singular input is reported through the pivot check below.
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() < 1e-13 * scale:
        raise SingularMatrixError(
            f"pivot {pivots.min():.3e} below 1e-13 x matrix scale {scale:.3e}"
        )
    x = scipy.linalg.lu_solve((lu, piv), b)
    bound = 1e-9 * (1.0 + float(np.max(np.abs(b)))) if b.size else 0.0
    r = b - A @ x
    if np.max(np.abs(r)) > bound:
        x = x + scipy.linalg.lu_solve((lu, piv), r)
    return x
