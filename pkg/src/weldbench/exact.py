"""Closed-form SLE and quantum-disk boundary-length formulas.

Contains the parameter dictionary linking the SLE side (kappa, rho-, rho+)
to the LQG side (gamma, Q, beta+-, W+-), the four-factor double-gamma
combination F and the derivative moment built from it, the boundary
reflection coefficients Rbar / R and the three-point coefficients Hbar / H,
the weight-2 and weight-gamma^2/2 disk boundary-length densities, the
classical-gamma special-case and general moment formulas, and the
kappa <-> 16/kappa duality map.

Everything ratio-heavy is assembled in log scale (complex logs permitted
along the way) and exponentiated once; real outputs assert a small
imaginary residue before discarding it.  All functions are pure.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, gammasgn

from .specfun import (
    PoleProximityError,
    gauss_2f1_at_one,
    log_double_gamma_ext,
    log_double_sine,
    log_gamma_complex,
    nearest_pole_distance,
)

LOG_2PI = math.log(2.0 * math.pi)

_IMAG_RESIDUE_TOL = 1e-9
_ROOT_AGREE_TOL = 1e-10
_BETA_Q_WINDOW = 1e-6


class ParameterError(ValueError):
    """Parameters violate a validity constraint."""


@dataclass(frozen=True)
class SleParams:
    """kappa > 0, rho- > -2, rho+ > max(-2, kappa/2 - 4)."""

    kappa: float
    rho_minus: float
    rho_plus: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be positive, got {self.kappa}")
        if not self.rho_minus > -2:
            raise ParameterError(f"rho_minus must exceed -2, got {self.rho_minus}")
        lo = max(-2.0, self.kappa / 2.0 - 4.0)
        if not self.rho_plus > lo:
            raise ParameterError(f"rho_plus must exceed {lo}, got {self.rho_plus}")

    @property
    def q_kappa(self):
        """sqrt(kappa)/2 + 2/sqrt(kappa), the root-sum half."""
        s = math.sqrt(self.kappa)
        return 0.5 * s + 2.0 / s


@dataclass(frozen=True)
class LqgParams:
    """gamma in (0,2) with Q = gamma/2 + 2/gamma and per-side beta, W.

    The weights satisfy W = gamma (Q + gamma/2 - beta) on each side, and
    rho_pm = gamma^2 - gamma beta_pm reproduces the paired SleParams.
    """

    gamma: float
    beta_minus: float
    beta_plus: float
    Q: float = field(init=False)
    W_minus: float = field(init=False)
    W_plus: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.gamma < 2.0:
            raise ParameterError(f"gamma must lie in (0,2), got {self.gamma}")
        q = 0.5 * self.gamma + 2.0 / self.gamma
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "W_minus", self.gamma * (q + 0.5 * self.gamma - self.beta_minus))
        object.__setattr__(self, "W_plus", self.gamma * (q + 0.5 * self.gamma - self.beta_plus))

    @classmethod
    def from_weights(cls, gamma, w_minus, w_plus):
        q = 0.5 * gamma + 2.0 / gamma
        return cls(gamma, q + 0.5 * gamma - w_minus / gamma, q + 0.5 * gamma - w_plus / gamma)


@dataclass(frozen=True)
class BoundaryCosmology:
    """Boundary cosmological constants mu1, mu2 >= 0 (not both zero).

    For mu_j > 0 the companion parameter sigma_j satisfies
    Re sigma_j = Q/2 and mu_j = exp(i pi gamma (sigma_j - Q/2)); for
    mu_j = 0 the sigma_j slot is unused (the one-sided closed form takes
    over).
    """

    mu1: float
    mu2: float
    sigma1: complex
    sigma2: complex

    def __post_init__(self):
        if self.mu1 < 0 or self.mu2 < 0:
            raise ParameterError("cosmological constants must be nonnegative")
        if self.mu1 == 0 and self.mu2 == 0:
            raise ParameterError("mu1 and mu2 must not both vanish")

    @classmethod
    def from_mu(cls, mu1, mu2, gamma):
        q = 0.5 * gamma + 2.0 / gamma
        def sigma(mu):
            if mu == 0:
                return complex(0.5 * q, 0.0)
            return complex(0.5 * q, -math.log(mu) / (math.pi * gamma))
        return cls(float(mu1), float(mu2), sigma(mu1), sigma(mu2))

    def check(self, gamma, tol=1e-12):
        q = 0.5 * gamma + 2.0 / gamma
        for mu, sigma in ((self.mu1, self.sigma1), (self.mu2, self.sigma2)):
            if mu > 0:
                if abs(sigma.real - 0.5 * q) > tol:
                    raise ParameterError("Re sigma must equal Q/2")
                recon = cmath.exp(1j * math.pi * gamma * (sigma - 0.5 * q))
                if abs(recon - mu) > tol * max(1.0, mu):
                    raise ParameterError("sigma does not reproduce mu")


@dataclass(frozen=True)
class MomentQuery:
    """A moment order lambda with its quadratic-root pair and threshold."""

    lam: float
    alpha_roots: tuple
    lambda0: float

    @classmethod
    def build(cls, lam, p: SleParams):
        return cls(lam, alpha_roots(lam, p.kappa), lambda0(p))


def params_convert(p):
    """SleParams <-> LqgParams via kappa = gamma^2 (kappa < 4 branch).

    For kappa >= 4 the conversion is undefined; apply duality_map first.
    """
    if isinstance(p, SleParams):
        if not p.kappa < 4.0:
            raise ParameterError("kappa >= 4: apply duality_map before converting")
        g = math.sqrt(p.kappa)
        return LqgParams(g, g - p.rho_minus / g, g - p.rho_plus / g)
    if isinstance(p, LqgParams):
        g = p.gamma
        return SleParams(g * g, g * g - g * p.beta_minus, g * g - g * p.beta_plus)
    raise TypeError(f"expected SleParams or LqgParams, got {type(p)!r}")


def lambda0(p: SleParams):
    """Critical moment order (rho+ + 2)(rho+ + 4 - kappa/2) / kappa."""
    return (p.rho_plus + 2.0) * (p.rho_plus + 4.0 - 0.5 * p.kappa) / p.kappa


def alpha_roots(lam, kappa):
    """Solutions of 1 - (a/2)(sqrt(k)/2 + 2/sqrt(k) - a/2) = lambda.

    Returns the pair (qk - sqrt(d), qk + sqrt(d)) with d = qk^2 - 4(1-lam);
    a complex-conjugate pair when d < 0.  The roots always sum to 2 qk.
    """
    s = math.sqrt(kappa)
    qk = 0.5 * s + 2.0 / s
    disc = qk * qk - 4.0 * (1.0 - lam)
    root = cmath.sqrt(disc)
    return (qk - root, qk + root)


def log_F(x, p: SleParams):
    """log of the four-factor double-gamma combination F(x, kappa, rho-, rho+)."""
    s = math.sqrt(p.kappa)
    b = 0.5 * s
    rp = p.rho_plus / s
    rs = (p.rho_minus + p.rho_plus) / s
    x = complex(x)
    args = (
        2.0 / s - 0.5 * s + rp + 0.5 * x,
        4.0 / s + rp - 0.5 * x,
        4.0 / s - 0.5 * s + rs + 0.5 * x,
        6.0 / s + rs - 0.5 * x,
    )
    for a in args:
        if nearest_pole_distance(b, a) < 1e-9:
            raise PoleProximityError(f"F factor argument {a} too close to a Gamma_b pole")
    return (
        log_double_gamma_ext(b, args[0])
        + log_double_gamma_ext(b, args[1])
        - log_double_gamma_ext(b, args[2])
        - log_double_gamma_ext(b, args[3])
    )


def F(x, p: SleParams):
    return cmath.exp(log_F(x, p))


def _real_part(value, what, tol=_IMAG_RESIDUE_TOL):
    scale = max(1.0, abs(value))
    if abs(value.imag) > tol * scale:
        raise ArithmeticError(f"{what}: imaginary residue {value.imag:.3e} too large")
    return value.real


def sle_derivative_moment(lam, p: SleParams):
    """E[psi'(1)^lambda] = F(alpha)/F(sqrt kappa); +inf for lambda >= lambda0.

    Both quadratic roots are evaluated and must agree to 1e-10 relative.
    Supported for every kappa > 0: the combination is invariant under the
    kappa <-> 16/kappa duality, so no explicit mapping is needed.
    """
    lam0 = lambda0(p)
    if lam >= lam0:
        return math.inf
    denom = log_F(math.sqrt(p.kappa), p)
    a1, a2 = alpha_roots(lam, p.kappa)
    v1 = cmath.exp(log_F(a1, p) - denom)
    v2 = cmath.exp(log_F(a2, p) - denom)
    if abs(v1 - v2) > _ROOT_AGREE_TOL * max(1.0, abs(v1)):
        raise ArithmeticError(
            f"alpha-root disagreement {abs(v1 - v2):.3e} for lam={lam}, {p}"
        )
    out = _real_part(0.5 * (v1 + v2), "sle_derivative_moment", 1e-10)
    return out


def _log_rbar_onesided(beta, mu, g: LqgParams):
    """log Rbar(beta, mu, 0), the one-sided closed form."""
    gam, q = g.gamma, g.Q
    b = 0.5 * gam
    d = q - beta
    out = (2.0 / gam * d) * math.log(mu) if mu != 1.0 else 0.0
    out += (2.0 / gam * d - 0.5) * LOG_2PI
    out += (0.5 * gam * d - 0.5) * math.log(2.0 / gam)
    out -= (2.0 / gam * d) * math.lgamma(1.0 - 0.25 * gam * gam)
    out = complex(out)
    out -= cmath.log(complex(d))
    out += log_double_gamma_ext(b, beta - 0.5 * gam)
    out -= log_double_gamma_ext(b, d)
    return out


def _log_rbar_twosided(beta, cosmo: BoundaryCosmology, g: LqgParams):
    """log Rbar(beta, mu1, mu2) for mu1, mu2 > 0."""
    gam, q = g.gamma, g.Q
    b = 0.5 * gam
    d = q - beta
    s1, s2 = cosmo.sigma1, cosmo.sigma2
    out = complex((2.0 / gam * d - 0.5) * LOG_2PI)
    out += (0.5 * gam * d - 0.5) * math.log(2.0 / gam)
    out -= (2.0 / gam * d) * math.lgamma(1.0 - 0.25 * gam * gam)
    out -= cmath.log(complex(d))
    out += log_double_gamma_ext(b, beta - 0.5 * gam)
    out += 1j * math.pi * (s1 + s2 - q) * d
    out -= log_double_gamma_ext(b, d)
    out -= log_double_sine(b, 0.5 * beta + s2 - s1)
    out -= log_double_sine(b, 0.5 * beta + s1 - s2)
    return out


def _log_rbar(beta, cosmo, g):
    if cosmo.mu1 > 0 and cosmo.mu2 > 0:
        return _log_rbar_twosided(beta, cosmo, g)
    return _log_rbar_onesided(beta, cosmo.mu1 + cosmo.mu2, g)


def reflection_bar(beta, cosmo: BoundaryCosmology, g: LqgParams):
    """Normalized boundary reflection coefficient Rbar(beta; mu1, mu2).

    The apparent pole of 1/(Q-beta) at beta = Q cancels against the zero of
    1/Gamma_b(Q-beta); near beta = Q the value is obtained by a four-point
    Richardson limit, giving Rbar(Q, mu1, mu2) = 1.
    """
    q = g.Q
    if abs(q - beta) < _BETA_Q_WINDOW:
        h = 1e-3
        f = lambda bb: cmath.exp(_log_rbar(bb, cosmo, g))
        near = 0.5 * (f(q + h) + f(q - h))
        far = 0.5 * (f(q + 2 * h) + f(q - 2 * h))
        val = (4.0 * near - far) / 3.0
        # correct for being centered at Q rather than beta
        if beta != q:
            slope = (f(q + h) - f(q - h)) / (2.0 * h)
            val += slope * (beta - q)
        return _real_part(val, "reflection_bar")
    return _real_part(cmath.exp(_log_rbar(beta, cosmo, g)), "reflection_bar")


def reflection(beta, cosmo: BoundaryCosmology, g: LqgParams):
    """Unnormalized reflection coefficient -Gamma(1 - (2/gamma)(Q-beta)) Rbar."""
    x = 1.0 - 2.0 / g.gamma * (g.Q - beta)
    if abs(x - round(x)) < 1e-12 and round(x) <= 0:
        raise PoleProximityError(f"Gamma pole in reflection at argument {x}")
    sign = -gammasgn(x)
    q = g.Q
    if abs(q - beta) < _BETA_Q_WINDOW:
        return sign * math.exp(gammaln(x)) * reflection_bar(beta, cosmo, g)
    log_abs = gammaln(x) + _log_rbar(beta, cosmo, g)
    val = sign * cmath.exp(log_abs)
    return _real_part(val, "reflection")


def h_bar(beta, alpha, g: LqgParams):
    """Three-point boundary coefficient Hbar^{(beta, beta, alpha)}."""
    gam, q = g.gamma, g.Q
    b = 0.5 * gam
    base = LOG_2PI - 0.25 * gam * gam * math.log(0.5 * gam) - math.lgamma(1.0 - 0.25 * gam * gam)
    out = complex((2.0 / gam) * (q - beta - 0.5 * alpha) * base)
    out += 2.0 * log_double_gamma_ext(b, 0.5 * alpha)
    out += log_double_gamma_ext(b, q - beta + 0.5 * alpha)
    out += log_double_gamma_ext(b, beta + 0.5 * alpha - 0.5 * gam)
    out -= log_double_gamma_ext(b, 2.0 / gam)
    out -= 2.0 * log_double_gamma_ext(b, q - beta)
    out -= log_double_gamma_ext(b, alpha)
    return _real_part(cmath.exp(out), "h_bar")


def h_coeff(beta, alpha, g: LqgParams):
    """H = (2/gamma) Gamma((2/gamma)(alpha/2 + beta - Q)) Hbar."""
    gam = g.gamma
    x = (2.0 / gam) * (0.5 * alpha + beta - g.Q)
    if abs(x - round(x)) < 1e-12 and round(x) <= 0:
        raise PoleProximityError(f"Gamma pole in h_coeff at argument {x}")
    return (2.0 / gam) * gammasgn(x) * math.exp(gammaln(x)) * h_bar(beta, alpha, g)


def disk_length_joint_density(weight, l, r, g: LqgParams):
    """Joint boundary-length density of the weight-2 or weight-gamma^2/2 disk."""
    if l <= 0 or r <= 0:
        raise ParameterError("lengths must be positive")
    gam = g.gamma
    e = 4.0 / (gam * gam)
    if weight == 2:
        c = (2.0 * math.pi) ** (e - 1.0) / ((1.0 - gam * gam / 4.0) * math.gamma(1.0 - gam * gam / 4.0) ** e)
        return c * (l + r) ** (-e - 1.0)
    if weight == gam * gam / 2.0:
        return e * (l * r) ** (e - 1.0) / (l ** e + r ** e) ** 2
    raise ParameterError(f"joint density known only for W in {{2, gamma^2/2}}, got {weight}")


def disk_length_marginal_density(weight, cosmo: BoundaryCosmology, l, g: LqgParams):
    """Density of mu1 L1 + mu2 L2: Rbar(beta; mu1, mu2) l^{-2W/gamma^2}.

    Valid across both the thick (W >= gamma^2/2) and thin (W < gamma^2/2)
    regimes; the closed form is the same on both sides of W = gamma^2/2.
    """
    gam = g.gamma
    if not 0.0 < weight < gam * g.Q:
        raise ParameterError(f"weight must lie in (0, gamma*Q), got {weight}")
    if l <= 0:
        raise ParameterError("length must be positive")
    beta = gam + 2.0 / gam - weight / gam
    return reflection_bar(beta, cosmo, g) * l ** (-2.0 * weight / (gam * gam))


def disk_laplace(weight, cosmo: BoundaryCosmology, g: LqgParams):
    """(gamma / (2(Q-beta))) R(beta; mu1, mu2).

    For thick weights this is the Taylor-regularized Laplace functional
    (the n-term polynomial of the exponential subtracted); for thin
    weights it is the plain one.
    """
    gam = g.gamma
    if not 0.0 < weight < gam * g.Q:
        raise ParameterError(f"weight must lie in (0, gamma*Q), got {weight}")
    beta = gam + 2.0 / gam - weight / gam
    return 0.5 * gam / (g.Q - beta) * reflection(beta, cosmo, g)


def _both_roots(fn, lam, gamma):
    a1, a2 = alpha_roots(lam, gamma * gamma)
    v1, v2 = fn(a1), fn(a2)
    if abs(v1 - v2) > _ROOT_AGREE_TOL * max(1.0, abs(v1)):
        raise ArithmeticError(f"alpha-root disagreement {abs(v1 - v2):.3e}")
    return 0.5 * (v1 + v2)


def m_special(which, lam, beta_plus, g: LqgParams):
    """Moment with beta- pinned at gamma or at Q, as classical-Gamma ratios.

    which = "gamma-insertion" gives the (2/gamma)-scaled ratio, matching
    2F1 at 1 via Gauss summation; which = "Q-insertion" the (gamma/2) one.
    """
    gam, q = g.gamma, g.Q
    if not beta_plus < q + 0.5 * gam:
        raise ParameterError("beta_plus must be below Q + gamma/2")
    lam0 = lambda0(SleParams(gam * gam, 0.0, gam * gam - gam * beta_plus))
    if lam >= lam0:
        return math.inf
    if which == "gamma-insertion":
        c = 2.0 / gam
    elif which == "Q-insertion":
        c = 0.5 * gam
    else:
        raise ParameterError(f"unknown insertion kind {which!r}")

    def eval_root(alpha):
        num = log_gamma_complex(c * (q - beta_plus + 0.5 * alpha)) + log_gamma_complex(
            c * (2.0 * q - beta_plus - 0.5 * alpha)
        )
        den = log_gamma_complex(c * (q - beta_plus + 0.5 * gam)) + log_gamma_complex(
            c * (q - beta_plus + 2.0 / gam)
        )
        return cmath.exp(num - den)

    return _real_part(_both_roots(eval_root, lam, gam), "m_special")


def m_special_hypergeometric(which, lam, beta_plus, g: LqgParams):
    """Same moment via the 2F1-at-1 representation (independent code path)."""
    gam, q = g.gamma, g.Q
    c = 2.0 / gam if which == "gamma-insertion" else 0.5 * gam

    def eval_root(alpha):
        return gauss_2f1_at_one(
            c * (0.5 * alpha - 0.5 * gam),
            c * (0.5 * alpha - 2.0 / gam),
            c * (q - beta_plus + 0.5 * alpha),
        )

    return _real_part(_both_roots(eval_root, lam, gam), "m_special_hypergeometric")


def m_general(lam, beta_minus, beta_plus, g: LqgParams):
    """General moment m^lambda_gamma(beta-, beta+) as a Gamma_{gamma/2} product.

    Must agree with sle_derivative_moment under params_convert: the two
    are independent code paths through different double-gamma argument
    combinations.
    """
    gam, q = g.gamma, g.Q
    if not (beta_minus < q + 0.5 * gam and beta_plus < q + 0.5 * gam):
        raise ParameterError("beta_pm must be below Q + gamma/2")
    lam0 = lambda0(SleParams(gam * gam, gam * gam - gam * beta_minus, gam * gam - gam * beta_plus))
    if lam >= lam0:
        return math.inf
    b = 0.5 * gam
    s = beta_minus + beta_plus

    def eval_root(alpha):
        out = log_double_gamma_ext(b, 2.0 * q + gam - s)
        out += log_double_gamma_ext(b, 3.0 * q - s)
        out -= log_double_gamma_ext(b, 2.0 * q + 0.5 * gam - s + 0.5 * alpha)
        out -= log_double_gamma_ext(b, 3.0 * q + 0.5 * gam - s - 0.5 * alpha)
        out += log_double_gamma_ext(b, q - beta_plus + 0.5 * alpha)
        out += log_double_gamma_ext(b, 2.0 * q - beta_plus - 0.5 * alpha)
        out -= log_double_gamma_ext(b, q - beta_plus + 0.5 * gam)
        out -= log_double_gamma_ext(b, q - beta_plus + 2.0 / gam)
        return cmath.exp(out)

    return _real_part(_both_roots(eval_root, lam, gam), "m_general")


def duality_map(p: SleParams):
    """Map kappa > 4 parameters to the dual kappa~ = 16/kappa < 4 triple."""
    if not p.kappa > 4.0:
        raise ParameterError("duality_map requires kappa > 4")
    if not p.rho_plus > 0.5 * p.kappa - 4.0:
        raise ParameterError("duality needs rho_plus > kappa/2 - 4")
    kt = 16.0 / p.kappa
    rm = 0.5 * kt - 2.0 + 0.25 * kt * p.rho_minus
    rp = kt + 0.25 * kt * p.rho_plus - 4.0
    return SleParams(kt, rm, rp)
