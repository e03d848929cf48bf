"""Double gamma and double sine functions, plus supporting classical pieces.

The double gamma function Gamma_b(z) is defined for Re z > 0 by

    ln Gamma_b(z) = int_0^oo (1/t) [ (e^{-zt} - e^{-qt/2}) /
                    ((1-e^{-bt})(1-e^{-t/b}))
                    - (q/2 - z)^2/2 * e^{-t} + (z - q/2)/t ] dt,

with q = b + 1/b, and extended to a meromorphic function of z by the shift
identities

    Gamma_b(z) = Gamma_b(z+b)   * Gamma(bz)  * b^{-bz+1/2}   / sqrt(2*pi)
    Gamma_b(z) = Gamma_b(z+1/b) * Gamma(z/b) * b^{ z/b-1/2}  / sqrt(2*pi).

It is symmetric under b <-> 1/b, normalized by Gamma_b(q/2) = 1, and has
simple poles at z = -n*b - m/b for nonnegative integers n, m.  The double
sine function is the ratio S_b(z) = Gamma_b(z) / Gamma_b(q - z).

Everything here is evaluated in log scale; callers exponentiate once at
the end.  The integrand above loses all precision near t = 0 (the three
terms individually diverge like 1/t^2), so the integral is split at a
point delta: on (0, delta] the integrand is summed as an explicit Taylor
series in t whose singular parts cancel exactly, and on [delta, oo) the
nonsingular remainder is handled by adaptive Gauss-Kronrod quadrature
after the slowly decaying (z - q/2)/t^2 tail is integrated analytically.

All functions are pure; safe to call concurrently.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import loggamma

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Pole searches scan offsets -n*b - m/b for 0 <= n, m <= POLE_SCAN_MAX.
POLE_SCAN_MAX = 50
POLE_TOL = 1e-10

_SERIES_TERMS = 64
_QUAD_EPSABS = 5e-14
_TINY_INTEGRAND = 1e-20


class SpecfunError(Exception):
    """Base class for special-function evaluation failures."""


class PoleProximityError(SpecfunError):
    """Argument within tolerance of a pole."""


class QuadratureError(SpecfunError):
    """Adaptive quadrature did not reach the requested error bound."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved error bound {achieved:.3e})")
        self.achieved = achieved


class OverflowSignal(SpecfunError):
    """|log| exceeds the representable range; use the log-scale variant."""


@dataclass(frozen=True)
class DoubleGammaParam:
    """Modular parameter b > 0 of Gamma_b, with q = b + 1/b derived."""

    b: float
    q: float = field(init=False)

    def __post_init__(self):
        if not (self.b > 0.0 and math.isfinite(self.b)):
            raise ValueError(f"modular parameter must be positive, got {self.b}")
        object.__setattr__(self, "q", self.b + 1.0 / self.b)


def log_gamma_complex(z):
    """Principal branch of ln Gamma(z) for complex z.

    Raises PoleProximityError when z is within 1e-12 of a nonpositive
    integer.
    """
    z = complex(z)
    if abs(z.imag) < 1e-12:
        nearest = round(z.real)
        if nearest <= 0 and abs(z - nearest) < 1e-12:
            raise PoleProximityError(f"ln Gamma pole at {nearest}, z = {z}")
    return complex(loggamma(z))


def _cexpm1(z):
    """exp(z) - 1 without cancellation, complex-safe."""
    a, b = z.real, z.imag
    # e^{a+ib} - 1 = (expm1(a) cos b - 2 sin^2(b/2)) + i e^a sin b
    return complex(
        math.expm1(a) * math.cos(b) - 2.0 * math.sin(0.5 * b) ** 2,
        math.exp(a) * math.sin(b),
    )


@lru_cache(maxsize=128)
def _series_coeffs(b):
    """Taylor coefficients e_j of e^{-qt/2} / P(t) about t = 0.

    Here P(t) = (1 - e^{-bt})(1 - e^{-t/b}) / t^2, so e_0 = 1 and e_1 = 0.
    """
    n = _SERIES_TERMS + 3
    q = b + 1.0 / b
    k = np.arange(n, dtype=float)
    fact = np.cumprod(np.concatenate(([1.0], np.arange(1, n, dtype=float))))
    s1 = (-b) ** k / np.cumprod(np.concatenate(([1.0], np.arange(2, n + 1, dtype=float))))
    s2 = (-1.0 / b) ** k / np.cumprod(np.concatenate(([1.0], np.arange(2, n + 1, dtype=float))))
    p = np.convolve(s1, s2)[:n]
    inv_p = np.zeros(n)
    inv_p[0] = 1.0
    for m in range(1, n):
        inv_p[m] = -np.dot(p[1 : m + 1], inv_p[m - 1 :: -1][: m])
    expq = (-0.5 * q) ** k / fact
    e = np.convolve(expq, inv_p)[:n]
    return e


def _series_integral(b, u, delta):
    """int_0^delta of the regularized integrand, as a Taylor sum.

    With u = z - q/2 the integrand equals sum_{n>=1} c_n t^{n-1} where
    c_n = sum_{m=1}^{n+2} (-u)^m/m! * e_{n+2-m} - (u^2/2)(-1)^n/n!,
    so the integral is sum c_n delta^n / n.
    """
    e = _series_coeffs(b)
    nmax = _SERIES_TERMS
    # powers (-u)^m / m! for m = 0..nmax+2
    pw = np.empty(nmax + 3, dtype=complex)
    pw[0] = 1.0
    for m in range(1, nmax + 3):
        pw[m] = pw[m - 1] * (-u) / m
    total = 0.0 + 0.0j
    dpow = delta
    sign = -1.0
    for n in range(1, nmax + 1):
        a_n = np.dot(pw[1 : n + 3][::-1], e[: n + 2])
        c_n = a_n - 0.5 * u * u * sign / math.gamma(n + 1)
        total += c_n * dpow / n
        dpow *= delta
        sign = -sign
    return total


def _tail_integrand(t, b, q, u):
    """(A(t) - (u^2/2) e^{-t}) / t, the exponentially decaying remainder."""
    denom = math.expm1(-b * t) * math.expm1(-t / b)  # = (1-e^{-bt})(1-e^{-t/b})
    if abs(u) * t < 0.5:
        # e^{-zt} - e^{-qt/2} cancels here; factor the common exponential
        num = math.exp(-0.5 * q * t) * _cexpm1(-u * t)
    else:
        num = cmath.exp(-(u + 0.5 * q) * t) - math.exp(-0.5 * q * t)
    return (num / denom - 0.5 * u * u * cmath.exp(-t)) / t


def log_double_gamma(b, z):
    """ln Gamma_b(z) from the defining integral; requires Re z > 0.

    Absolute error <= ~1e-11.  Use double_gamma / log_double_gamma_ext
    for arguments with Re z <= 0.
    """
    if b <= 0:
        raise ValueError("b must be positive")
    z = complex(z)
    if z.real <= 0:
        raise ValueError(f"defining integral needs Re z > 0, got {z}")
    q = b + 1.0 / b
    u = z - 0.5 * q
    if u == 0:
        return 0.0 + 0.0j
    radius = 2.0 * math.pi / max(b, 1.0 / b)
    delta = min(0.35 * radius, 1.0, 8.0 / (1.0 + abs(u)))
    head = _series_integral(b, u, delta)

    def f_re(t):
        return _tail_integrand(t, b, q, u).real

    def f_im(t):
        return _tail_integrand(t, b, q, u).imag

    val_re, err_re = quad(f_re, delta, np.inf, epsabs=_QUAD_EPSABS, epsrel=1e-13, limit=300)
    achieved = err_re
    if u.imag != 0.0:
        val_im, err_im = quad(f_im, delta, np.inf, epsabs=_QUAD_EPSABS, epsrel=1e-13, limit=300)
        achieved = max(achieved, err_im)
    else:
        val_im = 0.0
    # integrand magnitude scales like |u|^2 near delta, so the reachable
    # absolute error degrades accordingly for large arguments
    if achieved > max(1e-11, 1e-13 * abs(u) ** 2):
        raise QuadratureError("tail quadrature did not converge", achieved)
    # int_delta^oo u/t^2 dt = u/delta, done analytically.
    return head + u / delta + complex(val_re, val_im)


def nearest_pole_distance(b, z):
    """min over 0 <= n, m <= 50 of |z + n b + m/b|."""
    z = complex(z)
    n = np.arange(POLE_SCAN_MAX + 1, dtype=float)
    grid = n[:, None] * b + n[None, :] / b
    return float(np.min(np.abs(z + grid)))


@lru_cache(maxsize=4096)
def _log_double_gamma_ext_cached(b, zr, zi):
    z = complex(zr, zi)
    if nearest_pole_distance(b, z) < POLE_TOL:
        raise PoleProximityError(f"Gamma_b pole near z = {z} (b = {b})")
    # Walk right with the larger of the two shifts to minimize steps.
    shift = b if b >= 1.0 / b else 1.0 / b
    acc = 0.0 + 0.0j
    while z.real <= 0.5 * shift:
        # ln Gamma_b(z) = ln Gamma_b(z+shift) + ln Gamma(shift*z)
        #                 + (1/2 - shift*z) ln(shift) - ln sqrt(2 pi)
        acc += log_gamma_complex(shift * z) + (0.5 - shift * z) * math.log(shift) - LOG_SQRT_2PI
        z = z + shift
    return acc + log_double_gamma(b, z)


def log_double_gamma_ext(b, z):
    """ln Gamma_b(z) on the full plane, via backward shift identities."""
    z = complex(z)
    return _log_double_gamma_ext_cached(b, z.real, z.imag)


def double_gamma(b, z):
    """Gamma_b(z); raises OverflowSignal when exp would over/underflow."""
    lg = log_double_gamma_ext(b, z)
    if abs(lg.real) > 700.0:
        raise OverflowSignal(f"|ln Gamma_b| = {abs(lg.real):.1f}; use log_double_gamma_ext")
    return cmath.exp(lg)


def log_double_sine(b, z):
    """ln S_b(z) = ln Gamma_b(z) - ln Gamma_b(b + 1/b - z)."""
    q = b + 1.0 / b
    return log_double_gamma_ext(b, z) - log_double_gamma_ext(b, q - z)


def double_sine(b, z):
    """S_b(z) = Gamma_b(z) / Gamma_b(b + 1/b - z)."""
    ls = log_double_sine(b, z)
    if abs(ls.real) > 700.0:
        raise OverflowSignal(f"|ln S_b| = {abs(ls.real):.1f}; use log_double_sine")
    return cmath.exp(ls)


def gauss_2f1_at_one(a, b, c):
    """2F1(a, b; c; 1) = Gamma(c) Gamma(c-a-b) / (Gamma(c-a) Gamma(c-b)).

    Requires Re(c - a - b) > 0 (convergence of the series at 1).
    """
    a, b, c = complex(a), complex(b), complex(c)
    if (c - a - b).real <= 0:
        raise ValueError(f"need Re(c - a - b) > 0, got {(c - a - b).real}")
    if a == 0 or b == 0:
        return 1.0 + 0.0j
    lg = (
        log_gamma_complex(c)
        + log_gamma_complex(c - a - b)
        - log_gamma_complex(c - a)
        - log_gamma_complex(c - b)
    )
    return cmath.exp(lg)
