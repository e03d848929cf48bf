"""Monte Carlo engine for the two-force-point chordal SLE driving SDE.

Simulates the driving triple (W_t, V_t^-, V_t^+) of SLE_kappa(rho-; rho+)
started from (0, 0, 0),

    dW = sqrt(kappa) dB + rho-/(W - V^-) dt + rho+/(W - V^+) dt,
    dV^{\pm} = 2 / (V^{\pm} - W) dt,

together with the Loewner flow of the point 1,

    dg = 2/(g - W) dt,    dg' = -2 g'/(g - W)^2 dt,   g_0 = g'_0 = 1,

and estimates E[psi'(1)^lambda] where psi'(1) is the T -> oo limit of
g'_T(1) / (g_T(1) - V_T^+), the derivative at 1 of the mapping-out
function Mobius-normalized to send (first boundary point, 1, tip) to
(0, 1, infinity).

Internally the state is kept in the collision-free coordinates

    Dm = W - V^-,   Dp = V^+ - W,   Dg = g - V^+,   ln g',

which avoids catastrophic subtraction: Dg obeys the multiplicative ODE
d ln Dg = -2 dt / ((Dg + Dp) Dp) and stays positive by construction.

Stepping is Euler-Maruyama with local step h = (dt/kappa) *
min(cap(t)^2, Dm^2, Dp^2): quadratic in the force-point distances so the
error stays uniform in the Bessel-like local coordinate, with cap(t)
growing as max(1, sqrt t) so that the step tracks the diffusive scale of
the triple (all three gaps grow like sqrt(t); keeping the cap at 1 as the
capacity grows just burns cycles without reducing the error in the
normalized observable).  Halving dt must leave the estimated moment
within one standard error; see the refinement check in the suite.

Randomness is counter-based (splitmix64 streams keyed by seed and sample
index) so results are bit-identical regardless of worker count or
execution order.  Per-sample outputs are written into index-addressed
arrays and reduced with pairwise summation.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit, prange, set_num_threads

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

STATUS_OK = 0
STATUS_NOT_CONVERGED = 1
STATUS_SWALLOWED = 2
STATUS_REFLECTED = 3
STATUS_STALLED = 4

_MAX_STEPS = 300_000_000

_N_DIAG_CHECKPOINTS = 32


def _threads_from_env():
    raw = os.environ.get("WELDBENCH_THREADS", "")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return None


def apply_thread_cap():
    n = _threads_from_env()
    if n is not None:
        set_num_threads(n)


@dataclass(frozen=True)
class SimConfig:
    """Discretization parameters of the driving/tracking integrator."""

    total_time: float = 1.0e4
    dt: float = 2.0e-3
    startup_eps_factor: float = 1.0e-3  # eps = factor * sqrt(dt)
    # Swallowing is declared on g - W (which grows diffusively on every
    # non-swallowing path, so the cut never clips the lognormal left tail
    # of g - V+), with a generous default.
    swallow_eps: float = 1.0e-30
    tail_tol: float = 1.0e-3
    grow_steps: bool = True
    # Relative floor on the squared force-point distance in the step rule.
    # None selects 1e-14 (full dip resolution) away from the
    # boundary-touching regime and 1e-6 inside it: a reflecting Bessel of
    # dimension below 2 has divergent occupation of the collision zone,
    # so an unbounded step refinement there would stall the path.
    step_floor2: float = None

    @property
    def startup_eps(self):
        return self.startup_eps_factor * math.sqrt(self.dt)

    def resolved_floor2(self, p):
        if self.step_floor2 is not None:
            return self.step_floor2
        touching = min(p.rho_minus, p.rho_plus) < 0.5 * p.kappa - 2.0
        return 1.0e-6 if touching else 1.0e-14


@dataclass
class DrivingProcess:
    """Driving triple recorded on an increasing capacity-time grid."""

    times: np.ndarray
    w: np.ndarray
    v_minus: np.ndarray
    v_plus: np.ndarray
    kappa: float
    rho_minus: float
    rho_plus: float
    seed: int

    def __post_init__(self):
        if np.any(self.v_minus > self.w + 1e-12) or np.any(self.w > self.v_plus + 1e-12):
            raise ValueError("driving record violates V- <= W <= V+")


@dataclass
class TrackedPoint:
    """Loewner images g_t(1), g'_t(1) along a driving record."""

    times: np.ndarray
    g: np.ndarray
    gprime: np.ndarray
    swallowed: Optional[float] = None


@dataclass(frozen=True)
class MomentEstimate:
    lam: float
    mean: float
    stderr: float
    n: int
    truncation_diag: float
    seed: int
    n_rejected: int = 0
    n_swallowed: int = 0
    flagged: bool = False


@njit(cache=True, inline="always")
def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@njit(cache=True, inline="always")
def _stream_u01(key, counter):
    # splitmix64 in counter mode; 53-bit mantissa uniform in (0, 1]
    x = _mix64(key + _GOLDEN * counter)
    return (np.float64(x >> np.uint64(11)) + 1.0) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def _stream_normal_pair(key, counter):
    u1 = _stream_u01(key, counter)
    u2 = _stream_u01(key, counter + np.uint64(1))
    r = math.sqrt(-2.0 * math.log(u1))
    a = 2.0 * math.pi * u2
    return r * math.cos(a), r * math.sin(a)


@njit(cache=True)
def _sample_key(seed, idx):
    return _mix64(np.uint64(seed) ^ _mix64(np.uint64(idx) + np.uint64(0x1234567)))


@njit(cache=True)
def _path_kernel(kappa, rho_m, rho_p, total_time, dt, eps, grow_steps,
                 swallow_eps, floor2, key, diag_times, diag_vals, rec_times,
                 rec_w, rec_vm, rec_vp):
    """One driving+tracking path; returns (log_psi, status, t_stop, n_reflect).

    diag_times/diag_vals collect the log-estimator at checkpoint times in
    the final decade of capacity time.  rec_* (may be empty) receive the
    absolute driving triple at the requested record times.

    Swallowing of the tracked point is declared when g - W falls below
    swallow_eps: that gap grows diffusively on non-swallowing paths, so
    the cut never clips the (heavy) lognormal left tail of g - V+, while
    a genuine pinch drives g - W to zero in finite capacity time.  Dg is
    renormalized by factors of 1e140 so arbitrarily deep tails survive in
    float range; lnDg is recovered exactly from the rescale count.
    """
    sq = math.sqrt(kappa)
    dm = eps
    dp = eps
    w = 0.0
    dg = 1.0 - eps
    k_renorm = 0
    ln_renorm = 140.0 * math.log(10.0)
    lngp = 0.0
    t = 0.0
    counter = np.uint64(0)
    spare = 0.0
    have_spare = False
    n_reflect = 0
    n_diag = diag_times.shape[0]
    i_diag = 0
    n_rec = rec_times.shape[0]
    i_rec = 0
    status = STATUS_OK
    n_steps = 0

    while t < total_time:
        n_steps += 1
        if n_steps > _MAX_STEPS:
            status = STATUS_STALLED
            break
        cap = 1.0
        if grow_steps and t > 1.0:
            cap = t
        d2 = min(dm * dm, dp * dp)
        if d2 < cap * floor2:
            d2 = cap * floor2
        h = dt * min(cap, d2) / kappa
        rem = total_time - t
        if h > rem:
            h = rem
        if i_diag < n_diag and t + h > diag_times[i_diag]:
            hh = diag_times[i_diag] - t
            if hh > 1e-300 and hh < h:
                h = hh
        if i_rec < n_rec and t + h > rec_times[i_rec]:
            hh = rec_times[i_rec] - t
            if hh > 1e-300 and hh < h:
                h = hh

        if have_spare:
            xi = spare
            have_spare = False
        else:
            xi, spare = _stream_normal_pair(key, counter)
            counter += np.uint64(2)
            have_spare = True

        root = sq * math.sqrt(h) * xi

        # Heun (trapezoidal drift) step: the noise is additive, so the
        # predictor-corrector drift average upgrades the weak order to 2.
        fm0 = (rho_m + 2.0) / dm - rho_p / dp
        fp0 = (rho_p + 2.0) / dp - rho_m / dm
        fw0 = rho_m / dm - rho_p / dp
        dm_star = dm + fm0 * h + root
        dp_star = dp + fp0 * h - root
        if dm_star <= 0.0:
            dm_star = -dm_star
            if dm_star <= 0.0:
                dm_star = 1e-12 * math.sqrt(cap)
        if dp_star <= 0.0:
            dp_star = -dp_star
            if dp_star <= 0.0:
                dp_star = 1e-12 * math.sqrt(cap)
        fm1 = (rho_m + 2.0) / dm_star - rho_p / dp_star
        fp1 = (rho_p + 2.0) / dp_star - rho_m / dm_star
        fw1 = rho_m / dm_star - rho_p / dp_star

        w += root + 0.5 * (fw0 + fw1) * h
        dm_new = dm + 0.5 * (fm0 + fm1) * h + root
        dp_new = dp + 0.5 * (fp0 + fp1) * h - root
        if dm_new <= 0.0:
            dm_new = -dm_new
            n_reflect += 1
            if dm_new <= 0.0:
                dm_new = 1e-12 * math.sqrt(cap)
        if dp_new <= 0.0:
            dp_new = -dp_new
            n_reflect += 1
            if dp_new <= 0.0:
                dp_new = 1e-12 * math.sqrt(cap)

        dg_eff = dg if k_renorm == 0 else 0.0
        gw0 = dg_eff + dp
        r0 = 2.0 / (gw0 * dp)
        q0 = 2.0 / (gw0 * gw0)
        gw1 = dg_eff * (1.0 - h * r0) + dp_new
        r1 = 2.0 / (gw1 * dp_new)
        q1 = 2.0 / (gw1 * gw1)
        # multiplicative update of Dg = g - V+ via exp(-x): the bare (1 - x)
        # loses x^2/2 per step, which accumulates to an O(dt) drift of
        # ln Dg per decade of capacity time; the quadratic expansion is
        # exact enough for the small-x bulk, and force-point dips (rare,
        # large x) take the true exponential so Dg keeps contracting
        x = 0.5 * h * (r0 + r1)
        if x < 0.05:
            dg *= 1.0 - x + 0.5 * x * x
        else:
            dg *= math.exp(-x)
        lngp -= 0.5 * h * (q0 + q1)

        dm = dm_new
        dp = dp_new
        t += h

        if dg < 1e-140:
            dg *= 1e140
            k_renorm += 1

        if i_rec < n_rec and t >= rec_times[i_rec] - 1e-300:
            rec_w[i_rec] = w
            rec_vm[i_rec] = w - dm
            rec_vp[i_rec] = w + dp
            i_rec += 1
        if i_diag < n_diag and t >= diag_times[i_diag] - 1e-300:
            diag_vals[i_diag] = lngp - math.log(dg) + k_renorm * ln_renorm
            i_diag += 1
        if (dg_eff + dp < swallow_eps and k_renorm == 0) or \
                (k_renorm > 0 and dp < swallow_eps) or k_renorm >= 6:
            status = STATUS_SWALLOWED
            break

    log_psi = lngp - math.log(dg) + k_renorm * ln_renorm
    return log_psi, status, t, n_reflect


@njit(cache=True, parallel=True)
def _moment_batch(kappa, rho_m, rho_p, total_time, dt, eps, grow_steps,
                  swallow_eps, floor2, seed, n, diag_times):
    log_psi = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    n_reflect = np.empty(n, dtype=np.int64)
    diag = np.empty(n)
    empty = np.empty(0)
    for i in prange(n):
        dvals = np.full(diag_times.shape[0], np.nan)
        key = _sample_key(seed, i)
        lp, st, t_stop, n_refl = _path_kernel(
            kappa, rho_m, rho_p, total_time, dt, eps, grow_steps,
            swallow_eps, floor2, key, diag_times, dvals, empty, empty, empty, empty)
        n_reflect[i] = n_refl
        lo = lp
        hi = lp
        for k in range(dvals.shape[0]):
            v = dvals[k]
            if not np.isnan(v):
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
        diag[i] = math.expm1(hi - lo)
        log_psi[i] = lp
        status[i] = st
    return log_psi, status, diag, n_reflect


@njit(cache=True, parallel=True)
def _record_batch(kappa, rho_m, rho_p, total_time, dt, eps, grow_steps,
                  swallow_eps, floor2, seed, n, rec_times):
    m = rec_times.shape[0]
    w = np.full((n, m), np.nan)
    vm = np.full((n, m), np.nan)
    vp = np.full((n, m), np.nan)
    status = np.empty(n, dtype=np.int64)
    t_stop = np.empty(n)
    empty = np.empty(0)
    for i in prange(n):
        key = _sample_key(seed, i)
        lp, st, ts, n_refl = _path_kernel(
            kappa, rho_m, rho_p, total_time, dt, eps, grow_steps,
            swallow_eps, floor2, key, empty, empty, rec_times, w[i], vm[i], vp[i])
        status[i] = st
        t_stop[i] = ts
    return w, vm, vp, status, t_stop


def _diag_checkpoints(total_time):
    lo = total_time / 10.0
    return lo * (10.0 ** (np.arange(_N_DIAG_CHECKPOINTS) / (_N_DIAG_CHECKPOINTS - 1.0)))


def sample_driving_batch(p, cfg: SimConfig, seed, n_paths, record_times=None):
    """Simulate driving triples; returns (records, status, stop_times).

    record_times defaults to a logarithmic grid ending at cfg.total_time.
    Entries of a record past a path's swallowing time are NaN.
    """
    apply_thread_cap()
    if record_times is None:
        record_times = np.geomspace(max(cfg.dt, 1e-4), cfg.total_time, 256)
    record_times = np.ascontiguousarray(record_times, dtype=np.float64)
    w, vm, vp, status, t_stop = _record_batch(
        p.kappa, p.rho_minus, p.rho_plus, cfg.total_time, cfg.dt,
        cfg.startup_eps, cfg.grow_steps, cfg.swallow_eps,
        cfg.resolved_floor2(p), np.uint64(seed), int(n_paths), record_times)
    out = []
    for i in range(n_paths):
        out.append(DrivingProcess(record_times.copy(), w[i], vm[i], vp[i],
                                  p.kappa, p.rho_minus, p.rho_plus, seed))
    return out, status, t_stop


def sample_driving(p, cfg: SimConfig, seed, record_times=None):
    """Simulate one driving triple and return its DrivingProcess record."""
    recs, status, _ = sample_driving_batch(p, cfg, seed, 1, record_times)
    return recs[0]


def driving_endpoint_sample(p, cfg: SimConfig, seed, n_paths, t_final=None):
    """(W, V-, V+) marginals at a single time, for distributional tests."""
    apply_thread_cap()
    t_final = cfg.total_time if t_final is None else t_final
    rec = np.array([t_final])
    w, vm, vp, status, _ = _record_batch(
        p.kappa, p.rho_minus, p.rho_plus, t_final, cfg.dt,
        cfg.startup_eps, cfg.grow_steps, cfg.swallow_eps,
        cfg.resolved_floor2(p), np.uint64(seed), int(n_paths), rec)
    return w[:, 0], vm[:, 0], vp[:, 0], status


def track_point(d: DrivingProcess, swallow_eps=1e-9):
    """Integrate the Loewner flow of the point 1 along a driving record.

    Heun (trapezoidal) steps on the recorded grid; the production moment
    kernel uses the same substeps as the driving instead.
    """
    times, w, vp = d.times, d.w, d.v_plus
    n = len(times)
    g = np.empty(n)
    lngp = np.empty(n)
    g[0] = 1.0
    lngp[0] = 0.0
    swallowed = None
    t_prev = 0.0
    gg, lp = 1.0, 0.0
    w_prev, vp_prev = 0.0, 0.0
    for i in range(n):
        h = times[i] - t_prev
        if h > 0 and swallowed is None:
            k1 = 2.0 / (gg - w_prev)
            q1 = 2.0 / (gg - w_prev) ** 2
            g_pred = gg + h * k1
            k2 = 2.0 / (g_pred - w[i])
            q2 = 2.0 / (g_pred - w[i]) ** 2
            gg += 0.5 * h * (k1 + k2)
            lp -= 0.5 * h * (q1 + q2)
            if gg - vp[i] < swallow_eps:
                swallowed = times[i]
        g[i] = gg
        lngp[i] = lp
        t_prev = times[i]
        w_prev, vp_prev = w[i], vp[i]
    return TrackedPoint(times, g, np.exp(lngp), swallowed)


def psi_prime(d: DrivingProcess, tp: TrackedPoint):
    """Normalized map-derivative estimate and its tail diagnostic.

    Returns (value, diag) where diag is the relative change of
    g'(1)/(g(1)-V+) over the final decade of recorded capacity time.
    """
    if tp.swallowed is not None:
        raise ValueError("point was swallowed; estimator undefined")
    ratio = tp.gprime / (tp.g - d.v_plus)
    t_final = d.times[-1]
    window = d.times >= t_final / 10.0
    vals = ratio[window]
    diag = float(np.max(vals) / np.min(vals) - 1.0)
    return float(ratio[-1]), diag


def estimate_moment(p, lam, n, cfg: SimConfig, seed):
    """Monte Carlo estimate of E[psi'(1)^lambda] with standard error.

    Only genuinely swallowed paths (estimator undefined) are excluded;
    the tail diagnostic and reflection counts are reported and drive the
    run-level flag, never per-sample rejection (conditioning on them
    selects against slow-converging geometries and biases the mean by
    far more than a standard error).  lambda <= 0 keeps the per-sample
    estimator in (0, 1]; positive lambda is allowed but flagged as
    heavy-tailed.  Bit-identical output for fixed (params, cfg, seed).
    """
    apply_thread_cap()
    diag_times = _diag_checkpoints(cfg.total_time)
    log_psi, status, diag, n_reflect = _moment_batch(
        p.kappa, p.rho_minus, p.rho_plus, cfg.total_time, cfg.dt,
        cfg.startup_eps, cfg.grow_steps, cfg.swallow_eps,
        cfg.resolved_floor2(p), np.uint64(seed), int(n), diag_times)
    accepted = status == STATUS_OK
    n_sw = int(np.sum(status == STATUS_SWALLOWED))
    n_acc = int(np.sum(accepted))
    n_rej = int(n - n_acc)
    refl_frac = float(np.mean(n_reflect > 0))
    if n_acc == 0:
        return MomentEstimate(lam, math.nan, math.nan, 0, math.inf, seed,
                              n_rej, n_sw, True)
    mean_diag = float(np.add.reduce(diag[accepted]) / n_acc)
    flagged = (n_acc < 0.95 * n) or (lam > 0) or (mean_diag > cfg.tail_tol) \
        or (refl_frac > 0.05)
    vals = np.exp(lam * log_psi[accepted])
    mean = float(np.add.reduce(vals) / n_acc)
    var = float(np.add.reduce((vals - mean) ** 2) / max(n_acc - 1, 1))
    stderr = math.sqrt(var / n_acc)
    return MomentEstimate(lam, mean, stderr, n_acc,
                          float(np.max(diag[accepted])), seed,
                          n_rej, n_sw, flagged)


def psi_prime_samples(p, cfg: SimConfig, seed, n):
    """Raw psi'(1) samples (log scale) with status, diag, reflect counts."""
    apply_thread_cap()
    diag_times = _diag_checkpoints(cfg.total_time)
    log_psi, status, diag, n_reflect = _moment_batch(
        p.kappa, p.rho_minus, p.rho_plus, cfg.total_time, cfg.dt,
        cfg.startup_eps, cfg.grow_steps, cfg.swallow_eps,
        cfg.resolved_floor2(p), np.uint64(seed), int(n), diag_times)
    return log_psi, status, diag, n_reflect
