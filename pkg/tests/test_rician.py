import math

import numpy as np
import pytest
from scipy import integrate
from scipy import special

from rice_em.rician import (
    RicianParams,
    augmented_expectation,
    bessel_ratio_i1_i0,
    log_bessel_i0,
    rician_log_density,
    sample_rician,
)

from oracles import (
    asymptotic_log_i0,
    asymptotic_ratio_i1_i0,
    central_diff,
    series_i0,
    series_i1,
    series_log_i0,
)


class TestLogBesselI0:
    def test_at_zero(self):
        assert log_bessel_i0(0.0) == 0.0

    def test_small_arguments_against_series(self):
        for x in np.linspace(0.0, 30.0, 301):
            assert log_bessel_i0(float(x)) == pytest.approx(
                series_log_i0(float(x)), abs=1e-10, rel=1e-12
            )

    def test_value_at_two_is_log_i0_two(self):
        # series at q = 1: sum 1/(n!)^2
        assert log_bessel_i0(2.0) == pytest.approx(math.log(series_i0(2.0)), rel=1e-14)

    def test_large_arguments_against_asymptotic(self):
        for x in [20.0, 35.0, 100.0, 1e3, 1e5, 1e8]:
            assert log_bessel_i0(x) == pytest.approx(asymptotic_log_i0(x), rel=1e-6)

    def test_no_overflow_at_700(self):
        val = log_bessel_i0(700.0)
        assert np.isfinite(val) and val > 690.0

    def test_against_scipy(self):
        xs = np.concatenate([np.linspace(0, 50, 101), [200.0, 5000.0, 1e7]])
        mine = log_bessel_i0(xs)
        ref = np.log(special.i0e(xs)) + xs
        assert np.allclose(mine, ref, rtol=1e-12, atol=1e-13)

    def test_derivative_identity(self):
        # d/dtau log I0(2 tau) = 2 I1(2 tau)/I0(2 tau)
        for tau in [0.3, 1.7, 6.0, 14.0, 60.0]:
            fd = central_diff(lambda t: log_bessel_i0(2.0 * t), tau, 1e-6 * max(1, tau))
            assert fd == pytest.approx(2.0 * bessel_ratio_i1_i0(2.0 * tau), rel=1e-6)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            log_bessel_i0(-1.0)
        with pytest.raises(ValueError):
            log_bessel_i0(np.nan)


class TestBesselRatio:
    def test_at_zero(self):
        assert bessel_ratio_i1_i0(0.0) == 0.0

    def test_small_against_series(self):
        for x in np.linspace(0.01, 25.0, 200):
            ref = series_i1(float(x)) / series_i0(float(x))
            assert bessel_ratio_i1_i0(float(x)) == pytest.approx(ref, rel=1e-12)

    def test_large_against_asymptotic(self):
        for x in [20.0, 50.0, 1e3, 1e6, 1e8]:
            assert bessel_ratio_i1_i0(x) == pytest.approx(
                asymptotic_ratio_i1_i0(x), rel=1e-12
            )

    def test_value_at_1e6(self):
        assert bessel_ratio_i1_i0(1e6) == pytest.approx(1.0 - 0.5e-6, rel=1e-5)

    def test_against_scipy(self):
        xs = np.concatenate([np.linspace(0.01, 60, 120), [500.0, 1e4]])
        assert np.allclose(
            bessel_ratio_i1_i0(xs), special.i1e(xs) / special.i0e(xs), rtol=1e-12
        )

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(7)
        xs = np.sort(np.concatenate([rng.uniform(0, 40, 400), rng.uniform(0, 1e6, 200)]))
        r = bessel_ratio_i1_i0(xs)
        assert np.all(r >= 0) and np.all(r < 1)
        assert np.all(np.diff(r) >= -1e-15)


class TestAugmentedExpectation:
    def test_at_zero(self):
        assert augmented_expectation(0.0) == 0.0

    def test_asymptotic_shift(self):
        assert augmented_expectation(1e4) == pytest.approx(1e4 - 0.25, abs=1e-3)

    def test_bounded_below_tau(self):
        taus = np.geomspace(1e-6, 1e8, 10_000)
        n = augmented_expectation(taus)
        assert np.all(n >= 0)
        assert np.all(n < taus)

    def test_value_against_scipy(self):
        taus = np.linspace(0.01, 30, 60)
        ref = taus * special.i1e(2 * taus) / special.i0e(2 * taus)
        assert np.allclose(augmented_expectation(taus), ref, rtol=1e-12)


class TestRicianLogDensity:
    def test_example_value(self):
        ref = math.log(2.0) - 6.5 + series_log_i0(6.0)
        assert rician_log_density(2.0, RicianParams(3.0, 1.0)) == pytest.approx(
            ref, rel=1e-13
        )

    def test_normalizes_to_one(self):
        for s, v in [(0.0, 1.0), (3.0, 1.0), (25.0, 4.0), (2.0, 0.25)]:
            params = RicianParams(s, v)
            total, err = integrate.quad(
                lambda y: math.exp(rician_log_density(y, params)),
                1e-12,
                s + 20.0 * math.sqrt(v),
                limit=200,
            )
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_rayleigh_special_case(self):
        # S = 0 reduces to the Rayleigh log-density
        y = np.linspace(0.1, 6.0, 40)
        params = RicianParams(0.0, 2.0)
        ref = np.log(y / 2.0) - y * y / 4.0
        assert np.allclose(rician_log_density(y, params), ref, rtol=1e-13)

    def test_rejects_nonpositive_y(self):
        with pytest.raises(ValueError):
            rician_log_density(0.0, RicianParams(1.0, 1.0))
        with pytest.raises(ValueError):
            rician_log_density(-2.0, RicianParams(1.0, 1.0))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            RicianParams(-1.0, 1.0)
        with pytest.raises(ValueError):
            RicianParams(1.0, 0.0)


class TestSampleRician:
    def test_reproducible(self):
        p = RicianParams(5.0, 2.0)
        a = sample_rician(p, 100, seed=42)
        b = sample_rician(p, 100, seed=42)
        assert np.array_equal(a, b)
        c = sample_rician(p, 100, seed=43)
        assert not np.array_equal(a, c)

    def test_positive(self):
        y = sample_rician(RicianParams(0.0, 1.0), 10_000, seed=1)
        assert np.all(y > 0)

    def test_count_validation(self):
        with pytest.raises(ValueError):
            sample_rician(RicianParams(1.0, 1.0), 0, seed=1)

    def test_distribution_ks(self):
        # KS test against a quadrature CDF of the magnitude density
        params = RicianParams(3.0, 1.5)
        n = 100_000
        y = sample_rician(params, n, seed=2024)
        grid = np.linspace(1e-9, params.signal + 12 * math.sqrt(params.sigma_sq), 4001)
        pdf = np.exp(rician_log_density(grid, params))
        cdf = integrate.cumulative_trapezoid(pdf, grid, initial=0.0)
        cdf /= cdf[-1]
        u = np.interp(np.sort(y), grid, cdf)
        ks = np.max(np.abs(u - (np.arange(1, n + 1) - 0.5) / n))
        # 1% critical value ~ 1.63/sqrt(n)
        assert ks < 1.63 / math.sqrt(n)

    def test_moments_match_quadrature(self):
        params = RicianParams(2.0, 1.0)
        y = sample_rician(params, 200_000, seed=9)
        mean_ref, _ = integrate.quad(
            lambda t: t * math.exp(rician_log_density(t, params)), 1e-12, 14.0
        )
        assert np.mean(y) == pytest.approx(mean_ref, abs=4 * np.std(y) / math.sqrt(y.size))
        # E[Y^2] = S^2 + 2 sigma^2 exactly
        assert np.mean(y**2) == pytest.approx(params.signal**2 + 2 * params.sigma_sq, rel=0.01)
