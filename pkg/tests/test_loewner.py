import collections
import math

import numpy as np
import pytest
import scipy.stats as st

from weldbench import exact as ex
from weldbench import loewner as lw


def zeros_driving(n=2001, t_max=1.0):
    times = np.linspace(1e-6, t_max, n)
    z = np.zeros_like(times)
    return lw.DrivingProcess(times, z, z, z, 0.0, 0.0, 0.0, 0)


class TestTrackPoint:
    def test_constant_driving_closed_form(self):
        # W == 0: g = sqrt(1+4t), g' = (1+4t)^{-1/2}
        d = zeros_driving()
        tp = lw.track_point(d)
        assert np.abs(tp.g - np.sqrt(1.0 + 4.0 * d.times)).max() < 1e-6
        assert np.abs(tp.gprime - (1.0 + 4.0 * d.times) ** -0.5).max() < 1e-6

    def test_gprime_monotone_and_positive(self):
        p = ex.SleParams(3.0, 0.5, 1.0)
        cfg = lw.SimConfig(total_time=2.0, dt=2e-3)
        rec = np.linspace(1e-4, 2.0, 5001)
        d = lw.sample_driving(p, cfg, 4, record_times=rec)
        tp = lw.track_point(d)
        assert np.all(tp.gprime > 0)
        assert np.all(np.diff(tp.gprime) <= 1e-14)

    def test_g_increasing_while_above_vplus(self):
        p = ex.SleParams(2.0, 0.0, 0.0)
        cfg = lw.SimConfig(total_time=2.0, dt=2e-3)
        rec = np.linspace(1e-4, 2.0, 5001)
        d = lw.sample_driving(p, cfg, 11, record_times=rec)
        tp = lw.track_point(d)
        assert tp.swallowed is None
        assert np.all(tp.g > d.v_plus)
        assert np.all(np.diff(tp.g) >= 0)

    def test_halved_step_self_consistency(self):
        p = ex.SleParams(2.0, 0.0, 0.0)
        cfg = lw.SimConfig(total_time=5.0, dt=1e-3)
        rec = np.linspace(1e-4, 5.0, 20001)
        d = lw.sample_driving(p, cfg, 99, record_times=rec)
        fine = lw.track_point(d)
        coarse = lw.track_point(lw.DrivingProcess(
            d.times[::2], d.w[::2], d.v_minus[::2], d.v_plus[::2],
            p.kappa, p.rho_minus, p.rho_plus, 99))
        assert abs(fine.g[-1] / coarse.g[-1] - 1.0) < 1e-4
        assert abs(fine.gprime[-1] / coarse.gprime[-1] - 1.0) < 1e-4


class TestDrivingLaw:
    def test_brownian_variance_without_force(self):
        # rho = 0: W is sqrt(kappa) x BM, Var(W_T) = kappa T, tested at 3 sigma
        kappa, T, n = 2.0, 1.0, 10000
        cfg = lw.SimConfig(total_time=T, dt=2e-3)
        w, _, _, status = lw.driving_endpoint_sample(
            ex.SleParams(kappa, 0.0, 0.0), cfg, 5, n, t_final=T)
        assert np.all(status == lw.STATUS_OK)
        var = w.var()
        se = var * math.sqrt(2.0 / n)
        assert abs(var - kappa * T) < 3.0 * se

    def test_brownian_scaling(self):
        # (kappa, T, dt) vs (kappa, 4T, 4dt) with W -> W/2 agree in law
        p = ex.SleParams(3.0, 1.0, 0.5)
        w1, _, _, _ = lw.driving_endpoint_sample(
            p, lw.SimConfig(total_time=1.0, dt=2e-3), 7, 6000, t_final=1.0)
        w2, _, _, _ = lw.driving_endpoint_sample(
            p, lw.SimConfig(total_time=4.0, dt=8e-3), 8, 6000, t_final=4.0)
        assert st.ks_2samp(w1, w2 / 2.0).pvalue > 0.01

    def test_bessel_marginal(self):
        # kappa=2, rho+=2, rho-=0: (V+ - W)/sqrt(kappa T) is chi with
        # dim 1 + 2(rho+ + 2)/kappa = 5
        p = ex.SleParams(2.0, 0.0, 2.0)
        T = 4.0
        w, _, vp, _ = lw.driving_endpoint_sample(
            p, lw.SimConfig(total_time=T, dt=2e-3), 6, 8000, t_final=T)
        x = (vp - w) / math.sqrt(p.kappa * T)
        assert st.kstest(x, st.chi(5).cdf).pvalue > 0.01

    def test_ordering_invariant(self):
        p = ex.SleParams(2.5, 1.0, 0.3)
        cfg = lw.SimConfig(total_time=3.0, dt=2e-3)
        recs, status, _ = lw.sample_driving_batch(p, cfg, 3, 8)
        for d in recs:
            assert np.all(d.v_minus <= d.w + 1e-12)
            assert np.all(d.w <= d.v_plus + 1e-12)
            assert np.all(np.diff(d.v_plus) >= -1e-12)
            assert np.all(np.diff(d.v_minus) <= 1e-12)


class TestSwallowing:
    def test_touching_regime_swallows(self):
        # rho+ < kappa/2 - 2: the trace hits the right boundary and
        # eventually disconnects the tracked point
        p = ex.SleParams(4.0, 0.0, -1.5)
        _, status, _, nrefl = lw.psi_prime_samples(
            p, lw.SimConfig(total_time=50.0, dt=2e-3), 17, 100)
        assert np.sum(status == lw.STATUS_SWALLOWED) > 0
        assert np.mean(nrefl > 0) > 0.5

    def test_nontouching_regime_does_not(self):
        p = ex.SleParams(2.0, 0.0, 0.0)
        _, status, _, _ = lw.psi_prime_samples(
            p, lw.SimConfig(total_time=50.0, dt=2e-3), 17, 100)
        assert np.all(status == lw.STATUS_OK)


class TestEstimateMoment:
    def test_lambda_zero_exact(self):
        p = ex.SleParams(2.0, 0.0, 0.0)
        est = lw.estimate_moment(p, 0.0, 500, lw.SimConfig(total_time=100.0), 7)
        assert est.mean == 1.0
        assert est.stderr == 0.0

    def test_deterministic(self):
        p = ex.SleParams(2.0, 0.5, 0.5)
        cfg = lw.SimConfig(total_time=100.0)
        a = lw.estimate_moment(p, -1.0, 400, cfg, 12345)
        b = lw.estimate_moment(p, -1.0, 400, cfg, 12345)
        assert a == b

    def test_samples_in_unit_interval_for_negative_lambda(self):
        p = ex.SleParams(2.0, 0.0, 0.0)
        log_psi, status, _, _ = lw.psi_prime_samples(
            p, lw.SimConfig(total_time=100.0), 21, 500)
        vals = np.exp(-0.7 * log_psi[status == lw.STATUS_OK])
        assert np.all(vals > 0)
        assert np.all(vals <= 1.0)

    def test_psi_prime_above_one(self):
        p = ex.SleParams(2.0, 0.0, 0.0)
        log_psi, status, _, _ = lw.psi_prime_samples(p, lw.SimConfig(), 21, 300)
        assert np.all(log_psi[status == lw.STATUS_OK] > 0)

    def test_positive_lambda_flagged(self):
        p = ex.SleParams(2.0, 0.0, 0.0)
        est = lw.estimate_moment(p, 0.3, 200, lw.SimConfig(total_time=100.0), 3)
        assert est.flagged

    @pytest.mark.slow
    def test_against_exact_small(self):
        # small-N smoke of the headline verification (full scale in the
        # acceptance suite)
        p = ex.SleParams(2.0, 0.0, 0.0)
        est = lw.estimate_moment(p, -1.0, 4000, lw.SimConfig(), 1234)
        want = ex.sle_derivative_moment(-1.0, p)
        assert est.n >= 0.95 * 4000
        assert abs(est.mean - want) < 3.5 * est.stderr

    @pytest.mark.slow
    def test_dt_refinement(self):
        # halving dt moves the estimate by less than one combined stderr
        p = ex.SleParams(2.0, 0.0, 0.0)
        n = 10000
        a = lw.estimate_moment(p, -1.0, n, lw.SimConfig(dt=2e-3), 5150)
        b = lw.estimate_moment(p, -1.0, n, lw.SimConfig(dt=1e-3), 5151)
        se = math.hypot(a.stderr, b.stderr)
        assert abs(a.mean - b.mean) < 2.0 * se

    @pytest.mark.slow
    def test_startup_eps_insensitive(self):
        p = ex.SleParams(2.0, 1.0, 0.5)
        n = 10000
        a = lw.estimate_moment(p, -1.0, n, lw.SimConfig(startup_eps_factor=1e-3), 42)
        b = lw.estimate_moment(p, -1.0, n, lw.SimConfig(startup_eps_factor=1e-2), 43)
        se = math.hypot(a.stderr, b.stderr)
        assert abs(a.mean - b.mean) < 2.0 * se


class TestPsiPrimeRecordApi:
    def test_estimator_and_diag(self):
        p = ex.SleParams(2.0, 0.0, 0.0)
        cfg = lw.SimConfig(total_time=100.0, dt=2e-3)
        rec = np.geomspace(1e-2, 100.0, 400)
        d = lw.sample_driving(p, cfg, 8, record_times=rec)
        tp = lw.track_point(d)
        val, diag = lw.psi_prime(d, tp)
        assert val > 1.0
        assert diag >= 0.0

    def test_swallowed_raises(self):
        times = np.linspace(1e-4, 1.0, 101)
        w = np.zeros_like(times)
        # v_plus artificially sweeping past g forces a swallow declaration
        vp = 1.0 + 4.0 * times
        d = lw.DrivingProcess(times, w, w - 1.0, vp, 2.0, 0.0, 0.0, 0)
        tp = lw.track_point(d)
        assert tp.swallowed is not None
        with pytest.raises(ValueError):
            lw.psi_prime(d, tp)
