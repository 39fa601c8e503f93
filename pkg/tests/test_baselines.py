"""Tests for the log-linear baselines and the direct Rician maximizer."""

import math

import numpy as np
import pytest

from rice_em import em
from rice_em.baselines import (
    _approx_fisher_theta,
    _direct_theta_hessian,
    _loglinear_passes,
    fit_ls,
    fit_rician_direct,
    fit_wls,
    rician_direct_gradient,
    rician_direct_loglik,
)
from rice_em.rician import RicianParams, bessel_ratio_i1_i0, rician_log_density
from rice_em.synth import (
    DEFAULT_S0,
    LOW_NOISE_SIGMA_SQ,
    AcquisitionScheme,
    GroundTruth,
    default_scheme,
    derive_seed,
    fixture_tensor,
    make_scheme,
    noise_free_signal,
    synthesize,
)

from oracles import central_diff, fd_gradient


def small_scheme(n_directions=8, n_pos_knots=11, repetitions=1):
    knots = np.concatenate([[0.0], np.geomspace(62.0, 14000.0, n_pos_knots)])
    return make_scheme(n_directions=n_directions, knots=knots, repetitions=repetitions)


def truth_at_snr(snr, order=2, seed=0):
    return GroundTruth(
        theta_true=fixture_tensor(order),
        s0_true=DEFAULT_S0,
        sigma_sq_true=(DEFAULT_S0 / snr) ** 2,
        seed=seed,
    )


def clean_data(scheme, truth):
    return noise_free_signal(scheme, truth)


class TestFitLs:
    def test_noise_free_exact_recovery(self):
        scheme = small_scheme()
        truth = truth_at_snr(10)
        rep = fit_ls(scheme, clean_data(scheme, truth), order=2)
        assert rep.method == "LS"
        assert rep.converged
        assert np.allclose(rep.theta.theta, truth.theta_true.theta, rtol=0, atol=1e-12)
        assert rep.s0_sq == pytest.approx(truth.s0_true**2, rel=1e-10)
        assert rep.sigma_sq == pytest.approx(0.0, abs=1e-12)

    def test_cutoff_uses_only_low_b_rows(self):
        # corrupt every row above the cutoff; the truncated fit must not care
        scheme = small_scheme()
        truth = truth_at_snr(10)
        y = clean_data(scheme, truth)
        y_bad = np.where(scheme.b_values > 1000.0, 17.0, y)
        rep = fit_ls(scheme, y_bad, order=2, b_cutoff=1000.0)
        assert rep.method == "LS-truncated"
        assert np.allclose(rep.theta.theta, truth.theta_true.theta, rtol=0, atol=1e-12)
        rep_full = fit_ls(scheme, y_bad, order=2)
        assert not np.allclose(rep_full.theta.theta, truth.theta_true.theta, atol=1e-6)

    def test_cutoff_row_counts_on_default_scheme(self):
        # 15-knot scheme: knots <= 1000 are {0, 62, ..., 757}, 8 of 15,
        # times 32 directions times 3 repetitions
        scheme = default_scheme()
        y = clean_data(scheme, truth_at_snr(10))
        _, _, _, n_used = _loglinear_passes(scheme, y, 2, 1000.0, passes=1)
        assert n_used == 8 * 32 * 3
        counts = [
            _loglinear_passes(scheme, y, 2, cutoff, passes=1)[3]
            for cutoff in (62.0, 500.0, 1000.0, 5000.0, None)
        ]
        assert counts == sorted(counts)
        assert counts[-1] == scheme.size

    def test_sigma_estimate_biased_high_at_low_snr(self):
        # log-linear residuals absorb the Rician noise floor; over 100
        # replicates at SNR 5 every estimate landed above the truth
        scheme = small_scheme()
        truth = truth_at_snr(5, seed=11)
        ests = []
        for i in range(100):
            data = synthesize(scheme, truth, seed=derive_seed(11, i))
            ests.append(fit_ls(scheme, data, order=2).sigma_sq)
        ests = np.array(ests)
        assert ests.mean() > truth.sigma_sq_true
        assert np.mean(ests > truth.sigma_sq_true) >= 0.95

    def test_insufficient_rows_error(self):
        scheme = small_scheme()
        y = np.zeros(scheme.size)
        y[:3] = 100.0
        with pytest.raises(ValueError, match="insufficient usable rows"):
            fit_ls(scheme, y, order=2)

    def test_rank_deficient_error(self):
        direction = np.array([[0.6, 0.8, 0.0]])
        scheme = AcquisitionScheme(
            knots=np.array([0.0, 1000.0]),
            directions=np.repeat(direction, 8, axis=0),
            repetitions=1,
        )
        y = np.full(scheme.size, 120.0)
        with pytest.raises(ValueError, match="rank-deficient"):
            fit_ls(scheme, y, order=2)

    def test_zero_rows_dropped(self):
        scheme = small_scheme()
        truth = truth_at_snr(10)
        y = clean_data(scheme, truth).copy()
        y[::7] = 0.0
        rep = fit_ls(scheme, y, order=2)
        assert np.allclose(rep.theta.theta, truth.theta_true.theta, rtol=0, atol=1e-12)


class TestFitWls:
    def test_equals_ls_on_noise_free_data(self):
        # exact interpolation leaves nothing for the reweighted passes to move
        scheme = small_scheme()
        truth = truth_at_snr(10)
        y = clean_data(scheme, truth)
        rep_ls = fit_ls(scheme, y, order=2)
        rep_wls = fit_wls(scheme, y, order=2)
        assert rep_wls.method == "WLS"
        assert np.allclose(rep_wls.theta.theta, rep_ls.theta.theta, rtol=0, atol=1e-10)
        assert rep_wls.s0_sq == pytest.approx(rep_ls.s0_sq, rel=1e-10)

    def test_theta_mse_not_worse_than_ls(self):
        # Rician magnitudes are heteroscedastic on the log scale; frozen
        # 100-replicate comparison (observed MSE ratio ~0.79)
        scheme = small_scheme()
        truth = GroundTruth(
            theta_true=fixture_tensor(2),
            s0_true=DEFAULT_S0,
            sigma_sq_true=LOW_NOISE_SIGMA_SQ,
            seed=22,
        )
        th_true = truth.theta_true.theta
        se_ls, se_wls = [], []
        for i in range(100):
            data = synthesize(scheme, truth, seed=derive_seed(22, i))
            se_ls.append(np.sum((fit_ls(scheme, data, 2, 1000.0).theta.theta - th_true) ** 2))
            se_wls.append(np.sum((fit_wls(scheme, data, 2, 1000.0).theta.theta - th_true) ** 2))
        assert np.mean(se_wls) <= np.mean(se_ls)

    def test_weights_invariant_to_global_scale(self):
        scheme = small_scheme()
        truth = truth_at_snr(12, seed=5)
        data = synthesize(scheme, truth, seed=5)
        rep1 = fit_wls(scheme, data.y, order=2)
        rep2 = fit_wls(scheme, 2.0 * data.y, order=2)
        assert np.allclose(rep1.theta.theta, rep2.theta.theta, rtol=0, atol=1e-12)
        assert rep2.s0_sq == pytest.approx(4.0 * rep1.s0_sq, rel=1e-12)
        assert rep2.sigma_sq == pytest.approx(4.0 * rep1.sigma_sq, rel=1e-12)

    def test_method_tag_truncated(self):
        scheme = small_scheme()
        y = clean_data(scheme, truth_at_snr(10))
        assert fit_wls(scheme, y, order=2, b_cutoff=1000.0).method == "WLS-truncated"


class TestDirectLoglik:
    def test_matches_density_sum(self):
        scheme = small_scheme(n_directions=6, n_pos_knots=4)
        rng = np.random.default_rng(7)
        for _ in range(5):
            theta = fixture_tensor(2).theta * rng.uniform(0.5, 1.5)
            s0_sq = float(rng.uniform(100.0, 10_000.0))
            sigma_sq = float(rng.uniform(5.0, 200.0))
            y = rng.uniform(1.0, 300.0, size=scheme.size)
            s = math.sqrt(s0_sq) * np.exp(scheme.design_matrix(2) @ theta)
            expected = sum(
                rician_log_density(yi, RicianParams(si, sigma_sq))
                for yi, si in zip(y, s)
            )
            got = rician_direct_loglik(theta, s0_sq, sigma_sq, scheme, y)
            assert got == pytest.approx(expected, rel=1e-12)

    def test_rayleigh_limit_at_zero_signal(self):
        scheme = small_scheme(n_directions=6, n_pos_knots=4)
        rng = np.random.default_rng(8)
        y = rng.uniform(1.0, 50.0, size=scheme.size)
        sigma_sq = 40.0
        got = rician_direct_loglik(np.zeros(6), 0.0, sigma_sq, scheme, y)
        rayleigh = float(
            np.sum(np.log(y) - math.log(sigma_sq) - y * y / (2.0 * sigma_sq))
        )
        assert got == pytest.approx(rayleigh, rel=1e-13)

    def test_em_fixed_point_not_below_init(self):
        scheme = small_scheme()
        truth = truth_at_snr(12, seed=31)
        data = synthesize(scheme, truth, seed=31)
        state0 = em.initialize(scheme, data, order=2)
        ll_init = rician_direct_loglik(
            state0.theta.theta, state0.s0_sq, state0.sigma_sq, scheme, data.y
        )
        rep = em.fit_mle(scheme, data, order=2, options=em.FitOptions(max_em_iters=2000))
        ll_fit = rician_direct_loglik(rep.theta.theta, rep.s0_sq, rep.sigma_sq, scheme, data.y)
        assert ll_fit >= ll_init - 1e-9


class TestDirectGradient:
    def test_matches_finite_differences(self):
        scheme = small_scheme(n_directions=6, n_pos_knots=4)
        rng = np.random.default_rng(9)
        for _ in range(3):
            theta = fixture_tensor(2).theta * rng.uniform(0.6, 1.4)
            s0_sq = float(rng.uniform(1_000.0, 80_000.0))
            sigma_sq = float(rng.uniform(10.0, 120.0))
            y = rng.uniform(1.0, 300.0, size=scheme.size)
            d_theta, d_s0, d_sigma = rician_direct_gradient(theta, s0_sq, sigma_sq, scheme, y)

            def pack(v):
                return rician_direct_loglik(v[:6], v[6], v[7], scheme, y)

            fd = fd_gradient(pack, np.concatenate([theta, [s0_sq, sigma_sq]]), h=1e-7)
            analytic = np.concatenate([d_theta, [d_s0, d_sigma]])
            assert np.allclose(analytic, fd, rtol=1e-6, atol=1e-8 * np.abs(fd).max())

    def test_rayleigh_score_at_zero_signal(self):
        scheme = small_scheme(n_directions=6, n_pos_knots=4)
        rng = np.random.default_rng(10)
        y = rng.uniform(1.0, 60.0, size=scheme.size)
        sigma_sq = 33.0
        m = y.size
        _, _, d_sigma = rician_direct_gradient(np.zeros(6), 0.0, sigma_sq, scheme, y)
        expected = -m / sigma_sq + float(np.sum(y * y)) / (2.0 * sigma_sq**2)
        assert d_sigma == pytest.approx(expected, rel=1e-13)

    def test_zero_at_rayleigh_mle(self):
        scheme = small_scheme(n_directions=6, n_pos_knots=4)
        rng = np.random.default_rng(11)
        y = rng.uniform(1.0, 60.0, size=scheme.size)
        sigma_hat = float(np.sum(y * y)) / (2.0 * y.size)
        d_theta, _, d_sigma = rician_direct_gradient(np.zeros(6), 0.0, sigma_hat, scheme, y)
        assert abs(d_sigma) < 1e-12 * y.size / sigma_hat
        assert np.all(d_theta == 0.0)


class TestRatioDerivativeIdentity:
    def test_identity_over_tau_range(self):
        # g'(tau) = 1 - g/tau - g^2, the I2 = I0 - 2 I1/tau reduction
        for tau in np.geomspace(0.1, 100.0, 25):
            g = bessel_ratio_i1_i0(tau)
            analytic = 1.0 - g / tau - g * g
            fd = central_diff(bessel_ratio_i1_i0, tau, 1e-6 * max(1.0, tau))
            assert analytic == pytest.approx(fd, rel=1e-6, abs=1e-12)


class TestApproxFisher:
    def test_within_ten_percent_of_expected_curvature(self):
        # Monte-Carlo expectation of the exact observed information at an
        # SNR 15 fixture; the high-SNR weight approximation should land
        # within 10% elementwise (observed max deviation ~1.3%)
        scheme = make_scheme(n_directions=8, knots=[0.0, 500.0, 1500.0], repetitions=1)
        Z = scheme.design_matrix(2)
        theta = fixture_tensor(2).theta
        s0 = 250.0
        sigma_sq = (s0 / 15.0) ** 2
        s = s0 * np.exp(Z @ theta)
        approx = _approx_fisher_theta(Z, s, sigma_sq)
        rng = np.random.default_rng(33)
        acc = np.zeros_like(approx)
        n_mc = 4000
        sigma = math.sqrt(sigma_sq)
        for _ in range(n_mc):
            yrep = np.hypot(s + sigma * rng.standard_normal(s.size), sigma * rng.standard_normal(s.size))
            u = yrep * s / sigma_sq
            g = bessel_ratio_i1_i0(u)
            acc -= _direct_theta_hessian(Z, s, u, g, sigma_sq)
        exact = acc / n_mc
        assert np.max(np.abs(approx - exact) / np.abs(exact)) < 0.10


class TestFitRicianDirect:
    def test_loglik_nondecreasing_in_iteration_budget(self):
        # accepted steps never decrease the objective, so longer budgets
        # can only improve the reported value
        scheme = small_scheme()
        truth = truth_at_snr(12, seed=41)
        data = synthesize(scheme, truth, seed=41)
        values = [
            fit_rician_direct(scheme, data, order=2, max_iters=k).loglik
            for k in range(1, 9)
        ]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_agrees_with_em(self):
        scheme = small_scheme()
        for seed, snr in ((51, 12.0), (52, 18.0)):
            truth = truth_at_snr(snr, seed=seed)
            data = synthesize(scheme, truth, seed=seed)
            rep_em = em.fit_mle(
                scheme, data, order=2, options=em.FitOptions(max_em_iters=4000)
            )
            rep_dir = fit_rician_direct(scheme, data, order=2, early_stop=True)
            assert np.allclose(rep_em.theta.theta, rep_dir.theta.theta, rtol=1e-3, atol=0)
            assert rep_em.s0_sq == pytest.approx(rep_dir.s0_sq, rel=1e-3)
            assert rep_em.sigma_sq == pytest.approx(rep_dir.sigma_sq, rel=1e-3)

    def test_method_tag_and_nonconvergence_flag(self):
        scheme = small_scheme()
        truth = truth_at_snr(12, seed=61)
        data = synthesize(scheme, truth, seed=61)
        rep = fit_rician_direct(scheme, data, order=2, max_iters=1)
        assert rep.method == "Rician-direct"
        assert not rep.converged
        assert rep.flags == ("non-converged",)
        assert rep.iterations == 1

    def test_early_stop_flags_gradient_floor(self):
        # at m=96 the float floor of the gradient norm sits above the
        # absolute tolerance; the stall exit fires instead
        scheme = small_scheme()
        truth = truth_at_snr(12, seed=71)
        data = synthesize(scheme, truth, seed=71)
        rep = fit_rician_direct(scheme, data, order=2, early_stop=True)
        assert rep.converged
        assert rep.flags == ("gradient-floor",)
        assert rep.iterations < 200

    def test_approx_fisher_path_reaches_same_optimum(self):
        scheme = small_scheme()
        truth = truth_at_snr(15, seed=81)
        data = synthesize(scheme, truth, seed=81)
        rep_exact = fit_rician_direct(scheme, data, order=2, early_stop=True)
        rep_approx = fit_rician_direct(
            scheme, data, order=2, early_stop=True, use_approx_fisher=True
        )
        assert np.allclose(rep_exact.theta.theta, rep_approx.theta.theta, rtol=1e-3, atol=0)
        assert rep_exact.sigma_sq == pytest.approx(rep_approx.sigma_sq, rel=1e-3)

    def test_all_zero_data_error(self):
        scheme = small_scheme()
        with pytest.raises(ValueError, match="all magnitudes are zero"):
            fit_rician_direct(scheme, np.zeros(scheme.size), order=2)

    def test_zero_rows_censored_not_dropped(self):
        scheme = small_scheme()
        truth = truth_at_snr(4, seed=91)
        data = synthesize(scheme, truth, seed=91)
        y = data.y.copy()
        y[np.argsort(y)[:5]] = 0.0
        rep = fit_rician_direct(scheme, y, order=2, max_iters=50)
        assert np.isfinite(rep.loglik)
