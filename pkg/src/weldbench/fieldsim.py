"""One-dimensional stochastic building blocks: conditioned drifted Brownian
motion, the two-construction process equivalence test, and discrete boundary
Gaussian multiplicative chaos on the strip boundary and on (0, 1).

The boundary field of the two-pointed disk decomposes into a radial part
(a drifted Brownian motion in twice the horizontal coordinate, conditioned
to stay negative on each side) and an independent lateral Gaussian part
whose covariance is the strip kernel

    G(z, w) = -log|e^z - e^w| - log|e^z - e^{conj w}|
              + max(2 Re z, 0) + max(2 Re w, 0)

minus the radial covariance 2 min(|x|, |y|) 1{same sign}.  Boundary GMC
atoms carry the weight

    dx * exp((gamma/2)(Y_i + h_i) - (gamma^2/8) C_ii + (gamma^2/8) v)

where C_ii is the exact cell-average of the lateral kernel over the grid
cell and v = 3 is the continuum additive constant of the cell-average
convention (the double integral of -2 log|s-t| over the unit cell is 3).
Lateral fields are drawn through a cached Cholesky factor; the kernel is
non-stationary, so circulant embedding does not apply.

All randomness is counter-based (Philox for the numpy side, splitmix64
streams inside the numba kernels); identical seeds reproduce measures
bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy.integrate import quad
from scipy.special import ndtr
from scipy.stats import ks_2samp

from .loewner import _mix64, _stream_normal_pair

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# residual probability that an accepted path turns positive after the
# simulated margin; the margin length is chosen from the drifted-BM
# all-time-maximum law P[max > y] = exp(-2 a y)
_RESIDUAL_TARGET = 1e-4

_CELL_LOG_CONSTANT = 3.0  # cell average of -2 log|s-t| is -2 log(dx) + 3


class FieldSimError(Exception):
    pass


@dataclass
class ProcessSample:
    """Path values on a uniform grid with a construction tag."""

    times: np.ndarray
    values: np.ndarray
    meta: str


@dataclass(frozen=True)
class GridSpec:
    """Cell-centered grid of spacing dx on [-window, window] (strip lines)
    or a graded grid on (0, 1) (interval chaos)."""

    window: float
    spacing: float
    two_lines: bool = False

    def __post_init__(self):
        n = 2.0 * self.window / self.spacing
        if abs(n - round(n)) > 1e-9:
            raise ValueError("2*window must be an integer multiple of spacing")

    @property
    def n_per_line(self):
        return int(round(2.0 * self.window / self.spacing))

    @property
    def points(self):
        L, dx = self.window, self.spacing
        return -L + dx * (np.arange(self.n_per_line) + 0.5)


@dataclass
class BoundaryFieldGrid:
    """One sampled boundary field: locations, line ids, values, and the
    diagonal (mollified) lateral variances used by the chaos weights."""

    x: np.ndarray
    line: np.ndarray            # 0 = lower boundary, 1 = upper (+ i pi)
    lateral: np.ndarray
    radial: np.ndarray
    cov_diag: np.ndarray
    spec: GridSpec
    beta: float


@dataclass
class GmcMeasure:
    locations: np.ndarray
    log_weights: np.ndarray
    gamma: float
    resolution: float
    line: Optional[np.ndarray] = None

    def log_mass(self, line=None):
        lw = self.log_weights if line is None else self.log_weights[self.line == line]
        if lw.size == 0:
            return -math.inf
        m = lw.max()
        return m + math.log(np.exp(lw - m).sum())

    def total_mass(self, line=None):
        return math.exp(self.log_mass(line))


@dataclass(frozen=True)
class GmcMomentEstimate:
    mean: float
    stderr: float
    n: int
    exponent: float
    resolution: float
    flagged: bool = False


@dataclass(frozen=True)
class KsReport:
    p_values: dict
    statistics: dict
    n: int
    mass_unit: float        # estimate of 2 a^2 E[Leb{A > -M}], exact value 1
    mass_ratio_dev: float   # acceptance-mass ratio at two heights vs exp law


@njit(cache=True)
def _cond_bm_batch(a, du, n_keep, n_total, base_key, n_paths, out, x_end, attempts):
    """Drifted BM conditioned to stay negative, by rejection with margin.

    Simulates X_j = X_{j-1} - a du + sqrt(du) xi on (0, n_total du],
    accepting paths that never reach 0; the first n_keep+1 values
    (including X_0 = 0) of each accepted path are stored.
    """
    sdu = math.sqrt(du)
    for i in range(n_paths):
        key = _mix64(np.uint64(base_key) ^ _mix64(np.uint64(i) + np.uint64(0xABCDEF)))
        counter = np.uint64(0)
        tries = 0
        while True:
            tries += 1
            x = 0.0
            alive = True
            for j in range(n_total):
                u1, u2 = _stream_normal_pair(key, counter)
                counter += np.uint64(2)
                x += -a * du + sdu * u1
                if x >= 0.0:
                    alive = False
                    break
                if j < n_keep:
                    out[i, j + 1] = x
                # second normal of the pair is deliberately unused: keeps
                # the stream layout simple and per-path deterministic
            if alive:
                out[i, 0] = 0.0
                x_end[i] = x
                attempts[i] = tries
                break
            if tries > 100000:
                attempts[i] = -1
                break


def sample_conditioned_drift_bm(a, horizon, dt, seed, n_paths=1):
    """Paths of B_t - a t conditioned to stay negative for all t > 0.

    Rejection sampling on (0, horizon + margin] with the margin sized so
    that the residual conditioning error (the chance an accepted path
    would still escape after the simulated stretch) is below 1e-4.
    Returns (paths, residual) where paths has shape (n_paths, n_keep+1)
    on the grid 0, dt, ..., horizon.
    """
    if a <= 0:
        raise ValueError("drift a must be positive")
    # escape probability of an accepted path after total length T decays
    # like exp(-a^2 T / 2) (the e^{2 a x} escape weight meets the Gaussian
    # tail at the boundary), so the margin is sized against that rate
    margin = 2.0 * math.log(100.0 / _RESIDUAL_TARGET) / (a * a)
    n_keep = int(round(horizon / dt))
    n_total = n_keep + int(math.ceil(margin / dt))
    out = np.zeros((n_paths, n_keep + 1))
    x_end = np.empty(n_paths)
    attempts = np.zeros(n_paths, dtype=np.int64)
    _cond_bm_batch(a, dt, n_keep, n_total, np.uint64(seed), n_paths,
                   out, x_end, attempts)
    if np.any(attempts < 0):
        raise FieldSimError("conditioned-BM rejection acceptance below 1e-5")
    residual = float(np.mean(np.exp(2.0 * a * x_end)))
    if residual > _RESIDUAL_TARGET:
        raise FieldSimError(
            f"conditioning margin insufficient: residual {residual:.2e}")
    return out, residual


def gaussian_tail_time_integral(a):
    """Quadrature of int_0^oo P[Z > a sqrt(t)] dt; equals 1/(2 a^2)."""
    if a <= 0:
        raise ValueError("a must be positive")
    val, err = quad(lambda t: 1.0 - ndtr(a * math.sqrt(t)), 0.0, np.inf,
                    epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def _free_drifted_paths(rng, a, n, n_steps, dt, start=0.0):
    """n free paths of start + B_t - a t on the grid (0, n_steps dt]."""
    steps = rng.standard_normal((n, n_steps)) * math.sqrt(dt) - a * dt
    return start + np.cumsum(steps, axis=1)


def equivalence_test_prop24(a, M, n, seed, dt=None, window=None):
    """Two-sample KS test of the two descriptions of the centered process.

    Construction (i): X(t) = B_t - a|t| + c' with c' drawn from the
    exponential density on (-M, oo).  Construction (ii): the two-sided
    path A with conditioned negative branch and free branch started at
    -M, recentered at a uniform time from {t : A_t > -M}.  The two laws
    agree exactly; the report carries KS p-values for four functionals.
    """
    if dt is None:
        dt = 0.01 * min(1.0, 1.0 / (a * a))
    if window is None:
        window = 40.0 * max(1.0, 1.0 / (a * a))
    n_steps = int(round(window / dt))
    rng = np.random.Generator(np.random.Philox(seed))

    # -- construction (i): exponential start, free drifted both sides
    c0 = -M + rng.exponential(1.0 / (2.0 * a), size=n)
    val_i = c0
    maxi = np.full(n, 0.0)
    occ_i = np.zeros(n)
    for sign in (1, -1):
        # both branches decay; batch in chunks to bound memory
        chunk = max(1, int(2e7 / n_steps))
        got = 0
        piece_max = np.empty(n)
        piece_occ = np.empty(n)
        while got < n:
            m = min(chunk, n - got)
            paths = _free_drifted_paths(rng, a, m, n_steps, dt)
            piece_max[got:got + m] = paths.max(axis=1)
            piece_occ[got:got + m] = dt * np.sum(
                paths + c0[got:got + m, None] > -M, axis=1)
            got += m
        maxi = np.maximum(maxi, piece_max)
        occ_i += piece_occ
    max_i = c0 + maxi
    occ_i += dt * np.ones(n)  # the t = 0 grid point itself (X(0) > -M)

    # -- construction (ii): conditioned branch below -M, free branch from -M
    cond, _ = sample_conditioned_drift_bm(a, window, dt, seed ^ 0x51F15EED, n)
    free = _free_drifted_paths(rng, a, n, n_steps, dt, start=-M)
    val_ii = np.empty(n)
    max_ii = np.empty(n)
    occ_ii = np.empty(n)
    for i in range(n):
        above = free[i] > -M
        occ_ii[i] = dt * np.sum(above)
        max_ii[i] = max(free[i].max(), -M)
        idx = np.flatnonzero(above)
        if idx.size == 0:
            # resample c' style degenerate draw: value sits at the start
            val_ii[i] = -M
        else:
            val_ii[i] = free[i][idx[rng.integers(idx.size)]]
    # the conditioned branch stays below -M, so max and occupation are
    # carried entirely by the free branch; cond is simulated to validate
    # the construction and to exercise the sampler
    del cond

    pvals, stats = {}, {}
    for name, s1, s2 in (
        ("value_at_zero", val_i, val_ii),
        ("global_max", max_i, max_ii),
        ("max_minus_value", max_i - val_i, max_ii - val_ii),
        ("time_above_level", occ_i, occ_ii),
    ):
        res = ks_2samp(s1, s2)
        pvals[name] = float(res.pvalue)
        stats[name] = float(res.statistic)

    mass_unit = float(2.0 * a * a * occ_ii.mean())
    # acceptance-mass check at a second height M2: the restricted mass is
    # exp(2 a M) E[Leb{A > -M}] / (2a) and the occupation expectation is
    # height-independent, so the simulated mass ratio must match the pure
    # exponential exp(2 a (M - M2)); equivalently the two occupation means
    # agree.  An independent batch supplies the second height.
    free2 = _free_drifted_paths(rng, a, n, n_steps, dt, start=-(M + 0.5 / a))
    occ2 = dt * np.sum(free2 > -(M + 0.5 / a), axis=1)
    mass_ratio_dev = float(abs(occ2.mean() / occ_ii.mean() - 1.0))
    return KsReport(pvals, stats, n, mass_unit, mass_ratio_dev)


# ---------------------------------------------------------------------------
# strip-boundary field and chaos


def _neg_log_abs_diff_exp(x, y):
    """-log|e^x - e^y|, stable for large |x|, |y|."""
    d = np.abs(x - y)
    return -0.5 * (x + y) - d / 2.0 - np.log1p(-np.exp(-d))


def _neg_log_sum_exp(x, y):
    """-log(e^x + e^y), stable."""
    d = np.abs(x - y)
    return -0.5 * (x + y) - d / 2.0 - np.log1p(np.exp(-d))


def _radial_cov(x, y):
    same = (x > 0) == (y > 0)
    return np.where(same, 2.0 * np.minimum(np.abs(x), np.abs(y)), 0.0)


def strip_lateral_cov(x, lx, y, ly):
    """Lateral covariance between boundary points (x on line lx, y on ly)."""
    plus = 2.0 * np.maximum(x, 0.0) + 2.0 * np.maximum(y, 0.0)
    same_line = lx == ly
    log_part = np.where(same_line,
                        2.0 * _neg_log_abs_diff_exp(x, y),
                        2.0 * _neg_log_sum_exp(x, y))
    return log_part + plus - _radial_cov(x, y)


_GL8_NODES, _GL8_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _strip_diag_cell_average(x0, line, dx):
    """Exact cell average of the lateral kernel over the cell at x0.

    The -2 log|x-y| part averages to -2 log dx + 3 analytically; the
    smooth remainder is integrated by 8x8 Gauss-Legendre.
    """
    half = 0.5 * dx
    s = half * _GL8_NODES
    xs = x0 + s[:, None]
    ys = x0 + s[None, :]
    ww = 0.25 * np.outer(_GL8_WEIGHTS, _GL8_WEIGHTS)
    smooth = strip_lateral_cov(xs, line, ys, line) + 2.0 * np.log(np.abs(xs - ys))
    return -2.0 * math.log(dx) + _CELL_LOG_CONSTANT + float((ww * smooth).sum())


_chol_cache = {}


def _strip_factor(spec: GridSpec):
    """(points, lines, cholesky factor, diagonal cell averages), cached."""
    key = (spec.window, spec.spacing, spec.two_lines)
    if key in _chol_cache:
        return _chol_cache[key]
    pts = spec.points
    if spec.two_lines:
        x = np.concatenate([pts, pts])
        line = np.concatenate([np.zeros(pts.size, dtype=np.int64),
                               np.ones(pts.size, dtype=np.int64)])
    else:
        x = pts
        line = np.zeros(pts.size, dtype=np.int64)
    cov = strip_lateral_cov(x[:, None], line[:, None], x[None, :], line[None, :])
    diag = np.array([_strip_diag_cell_average(x[i], line[i], spec.spacing)
                     for i in range(x.size)])
    np.fill_diagonal(cov, diag)
    factor = None
    jitter = 0.0
    base = np.trace(cov) / cov.shape[0]
    for k in range(5):
        try:
            factor = np.linalg.cholesky(
                cov + jitter * np.eye(cov.shape[0]) if jitter else cov)
            break
        except np.linalg.LinAlgError:
            jitter = base * (1e-14 * 10.0 ** k)
    if factor is None:
        raise FieldSimError("covariance not positive definite after jitter")
    if jitter > 1e-10 * base:
        raise FieldSimError(f"required jitter {jitter:.2e} exceeds tolerance")
    _chol_cache[key] = (x, line, factor, diag)
    return _chol_cache[key]


def sample_strip_boundary_field(beta, spec: GridSpec, g, seed, rng=None,
                                radial_mode="disk"):
    """One boundary-field sample of the weight-W disk field.

    radial_mode "disk" uses the conditioned drifted radial process of the
    two-pointed disk; "gff" uses the plain two-sided Brownian radial part
    (the free-boundary field), used by variance-identity checks.
    """
    x, line, factor, diag = _strip_factor(spec)
    if rng is None:
        rng = np.random.Generator(np.random.Philox(seed))
    lateral = factor @ rng.standard_normal(x.size)
    pts = spec.points
    n_side = pts.size // 2
    du = spec.spacing
    n_keep = spec.n_per_line  # path of length 2L in steps of dx
    if radial_mode == "disk":
        a = 0.5 * (g.Q - beta)
        if a <= 0:
            raise FieldSimError("thick-disk radial part needs beta < Q")
        paths, _ = sample_conditioned_drift_bm(
            a, 2.0 * spec.window, du, rng.integers(2 ** 62), 2)
        pos_path, neg_path = paths[0], paths[1]
    else:
        steps = rng.standard_normal((2, n_keep)) * math.sqrt(du)
        pos_path = np.concatenate([[0.0], np.cumsum(steps[0])])
        neg_path = np.concatenate([[0.0], np.cumsum(steps[1])])
    # radial value at |x| = (k + 1/2) dx is the path at u = 2|x|, an odd
    # multiple of dx: index 2k+1 on the du = dx grid
    radial_per_point = np.empty(pts.size)
    for k in range(n_side):
        xr = pts[n_side + k]
        idx = 2 * k + 1
        radial_per_point[n_side + k] = pos_path[idx]
        radial_per_point[n_side - 1 - k] = neg_path[idx]
    radial = np.concatenate([radial_per_point] * (2 if spec.two_lines else 1))
    return BoundaryFieldGrid(x, line, lateral, radial, diag, spec, beta)


def gmc_boundary_measure(f: BoundaryFieldGrid, g):
    """Boundary chaos atoms for one field sample (log-scale weights)."""
    gamma = g.gamma
    log_w = (math.log(f.spec.spacing)
             + 0.5 * gamma * (f.radial + f.lateral)
             - 0.125 * gamma * gamma * f.cov_diag
             + 0.125 * gamma * gamma * _CELL_LOG_CONSTANT)
    return GmcMeasure(f.x, log_w, gamma, f.spec.spacing, line=f.line)


def mc_reflection_moment(beta, cosmo, g, n, spec: GridSpec, seed):
    """MC estimate of E[(mu1 nu(R) + mu2 nu(R + i pi))^{(2/gamma)(Q-beta)}]."""
    gamma, q = g.gamma, g.Q
    if not (0.5 * gamma < beta < q):
        raise FieldSimError("beta must lie in (gamma/2, Q)")
    p_exp = 2.0 / gamma * (q - beta)
    if p_exp > 1.2:
        raise FieldSimError("moment exponent above 1.2; variance unmanageable")
    if cosmo.mu2 > 0 and not spec.two_lines:
        raise FieldSimError("two-sided cosmology requires a two-line grid")
    rng = np.random.Generator(np.random.Philox(seed))
    vals = np.empty(n)
    for i in range(n):
        fld = sample_strip_boundary_field(beta, spec, g, 0, rng=rng)
        nu = gmc_boundary_measure(fld, g)
        if cosmo.mu2 > 0:
            term = np.logaddexp(math.log(cosmo.mu1) + nu.log_mass(line=0),
                                math.log(cosmo.mu2) + nu.log_mass(line=1))
        else:
            term = math.log(cosmo.mu1) + nu.log_mass(line=0)
        vals[i] = math.exp(p_exp * term)
    mean = float(np.add.reduce(vals) / n)
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n))
    return GmcMomentEstimate(mean, stderr, n, p_exp, spec.spacing,
                             flagged=stderr > 0.2 * abs(mean))


def graded_interval_grid(n_cells, s=2.0):
    """Symmetric graded partition of (0, 1): x = u^s / (u^s + (1-u)^s)."""
    u = np.linspace(0.0, 1.0, n_cells + 1)
    e = np.power(u, s)
    e1 = np.power(1.0 - u, s)
    return e / (e + e1)


def _interval_weight_integrals(edges, c):
    """Per-cell integrals of x^{-c} (1-x)^{-c}, endpoint cells analytic."""
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    w = np.empty(mid.size)
    # interior cells: 4-point Gauss-Legendre
    nodes, wts = np.polynomial.legendre.leggauss(4)
    half = 0.5 * (hi - lo)
    xs = mid[:, None] + half[:, None] * nodes[None, :]
    vals = np.power(xs, -c) * np.power(1.0 - xs, -c)
    w[:] = (half[:, None] * wts[None, :] * vals).sum(axis=1)
    # endpoint cells: power-law part integrated exactly
    w[0] = (hi[0] ** (1.0 - c) - lo[0] ** (1.0 - c)) / (1.0 - c) \
        * (1.0 - mid[0]) ** -c
    w[-1] = ((1.0 - lo[-1]) ** (1.0 - c) - (1.0 - hi[-1]) ** (1.0 - c)) \
        / (1.0 - c) * mid[-1] ** -c
    return w


def _interval_factor(n_cells, s, mirror):
    key = ("interval", n_cells, s, mirror)
    if key in _chol_cache:
        return _chol_cache[key]
    edges = graded_interval_grid(n_cells, s)
    if mirror:
        edges = np.sort(1.0 - edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    dx = np.diff(edges)
    cov = -2.0 * np.log(np.abs(mid[:, None] - mid[None, :]) + np.eye(mid.size))
    np.fill_diagonal(cov, -2.0 * np.log(dx) + _CELL_LOG_CONSTANT)
    factor = None
    base = np.trace(cov) / cov.shape[0]
    jitter = 0.0
    for k in range(5):
        try:
            factor = np.linalg.cholesky(
                cov + jitter * np.eye(cov.shape[0]) if jitter else cov)
            break
        except np.linalg.LinAlgError:
            jitter = base * (1e-14 * 10.0 ** k)
    if factor is None or jitter > 1e-10 * base:
        raise FieldSimError("interval covariance not factorizable")
    _chol_cache[key] = (edges, mid, dx, factor)
    return _chol_cache[key]


def mc_interval_moment(beta, alpha, g, n, n_cells, seed, s=2.0, mirror=False):
    """MC estimate of E[nu((0,1))^{(2/gamma)(Q - beta - alpha/2)}] for the
    chaos with kernel -2 log|x-y| and density x^{-gamma beta/2} (1-x)^{...}.
    """
    gamma, q = g.gamma, g.Q
    if not (alpha > 0 and 0.5 * alpha + beta > 0.5 * gamma and beta < q):
        raise FieldSimError("interval moment hypotheses violated")
    c = 0.5 * gamma * beta
    if c >= 1.0:
        raise FieldSimError("endpoint singularity not integrable: gamma*beta/2 >= 1")
    p_exp = 2.0 / gamma * (q - beta - 0.5 * alpha)
    edges, mid, dx, factor = _interval_factor(n_cells, s, mirror)
    w_int = _interval_weight_integrals(edges, c)
    rng = np.random.Generator(np.random.Philox(seed))
    # log atom = log W_i + (gamma/2) h_i - (gamma^2/8)(C_ii - 3)
    #          = log W_i + (gamma/2) h_i + (gamma^2/4) log dx_i
    base = np.log(w_int) + 0.25 * gamma * gamma * np.log(dx)
    vals = np.empty(n)
    for i in range(n):
        h = factor @ rng.standard_normal(mid.size)
        lw = base + 0.5 * gamma * h
        m = lw.max()
        vals[i] = math.exp(p_exp * (m + math.log(np.exp(lw - m).sum())))
    mean = float(np.add.reduce(vals) / n)
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n))
    return GmcMomentEstimate(mean, stderr, n, p_exp, float(dx.min()),
                             flagged=stderr > 0.2 * abs(mean))


def richardson_pair(run, seed):
    """Two-resolution extrapolation 2 E(fine) - E(coarse) of a GMC moment.

    run(level, seed) must return a GmcMomentEstimate, level 0 = coarse,
    level 1 = half the spacing.
    """
    coarse = run(0, seed)
    fine = run(1, seed + 1)
    mean = 2.0 * fine.mean - coarse.mean
    stderr = math.sqrt(4.0 * fine.stderr ** 2 + coarse.stderr ** 2)
    return GmcMomentEstimate(mean, stderr, coarse.n + fine.n, fine.exponent,
                             fine.resolution,
                             flagged=coarse.flagged or fine.flagged)
