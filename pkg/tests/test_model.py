import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from lingermort.model import (
    JumpPattern,
    ParamSet,
    _mean_factors_all,
    assemble_full_moments,
    conditional_moments_year,
    enumerate_patterns,
    information_criteria,
    lingering_weight,
    mean_factors,
    mixture_loglik,
    single_pattern_loglik,
)
from lingermort.errors import DimensionMismatchError

from conftest import random_params


# ---------------------------------------------------------------------------
# Independent brute-force likelihood oracle
# ---------------------------------------------------------------------------

def _pi(tau, a, b, g):
    if tau < 0:
        return 0.0
    if tau == 0:
        return 1.0
    return g * b ** a * tau ** (a - 1.0) * math.exp(-b * tau)


def dense_pattern_moments(params, T, t_jump):
    """Mean/cov of the stacked improvements by scalar double loops."""
    X, C = params.X, params.C
    n = np.zeros(T)
    if t_jump is not None:
        n[t_jump - 1:] = 1.0

    def ell(t, c):            # t is the data year 2..T
        if t_jump is None:
            return 0.0
        a, b, g = params.alpha[c], params.beta[c], params.gamma[c]
        return (n[t - 1] * _pi(t - t_jump, a, b, g)
                - n[t - 2] * _pi(t - 1 - t_jump, a, b, g))

    idx = [(t, c, x) for t in range(2, T + 1)
           for c in range(C) for x in range(X)]
    N = len(idx)
    mean = np.empty(N)
    cov = np.empty((N, N))
    for i, (t, c, x) in enumerate(idx):
        mean[i] = (params.B[x] * params.D
                   + params.phi[c] * params.b[x] * params.d
                   + ell(t, c) * params.mu[x, c])
        for j, (s, cc, xx) in enumerate(idx):
            v = 0.0
            if t == s:
                v += params.B[x] * params.B[xx] * params.sigma_eta ** 2
                v += (params.phi[c] * params.b[x] * params.phi[cc]
                      * params.b[xx] * params.sigma_xi ** 2)
            if x == xx and c == cc:
                v += ell(t, c) * ell(s, c) * params.sigma_J ** 2
                if t == s:
                    v += 2.0 * params.sigma_e ** 2
                elif abs(t - s) == 1:
                    v -= params.sigma_e ** 2
            cov[i, j] = v
    return mean, cov


def dense_mixture_oracle(params, z):
    """Pattern enumeration + dense multivariate-normal log densities."""
    X, Tm1, C = z.shape
    T = Tm1 + 1
    zvec = z.transpose(1, 2, 0).reshape(-1)
    terms = []
    for t_jump in list(range(1, T + 1)) + [None]:
        mean, cov = dense_pattern_moments(params, T, t_jump)
        logf = multivariate_normal.logpdf(zvec, mean, cov)
        if t_jump is None:
            logw = T * math.log1p(-params.p)
        else:
            logw = (t_jump - 1) * math.log1p(-params.p) + math.log(params.p)
        terms.append(logw + logf)
    terms = np.array(terms)
    m = terms.max()
    return float(m + np.log(np.exp(terms - m).sum()))


# ---------------------------------------------------------------------------
# Decay kernel
# ---------------------------------------------------------------------------

class TestLingeringWeight:
    def test_lag_zero_is_one(self):
        assert lingering_weight(np.array([0.0]), 2.0, 1.0, 0.7)[0] == 1.0

    def test_negative_lags_are_zero(self):
        taus = np.array([-5.0, -1.0, -0.5])
        assert np.all(lingering_weight(taus, 2.0, 1.0, 0.7) == 0.0)

    def test_exponential_special_case(self):
        # alpha = 1 collapses to gamma * beta * exp(-beta tau)
        g, b = 0.6, 0.8
        for tau in range(1, 11):
            got = lingering_weight(np.array([float(tau)]), 1.0, b, g)[0]
            assert got == pytest.approx(g * b * math.exp(-b * tau), abs=1e-12)

    def test_zero_gamma_kills_the_tail(self):
        taus = np.arange(1.0, 6.0)
        assert np.all(lingering_weight(taus, 2.0, 1.0, 0.0) == 0.0)

    def test_mode_location(self):
        # gamma-density shape peaks at (alpha - 1) / beta for alpha > 1
        a, b = 3.0, 0.5
        taus = np.linspace(0.5, 20.0, 1000)
        w = lingering_weight(taus, a, b, 1.0)
        assert taus[np.argmax(w)] == pytest.approx((a - 1) / b, abs=0.05)


# ---------------------------------------------------------------------------
# Jump patterns
# ---------------------------------------------------------------------------

class TestJumpPatterns:
    def test_enumeration_order_and_count(self):
        pats = enumerate_patterns(6)
        assert len(pats) == 7
        assert [p.t_jump for p in pats] == [1, 2, 3, 4, 5, 6, None]

    def test_indicators_are_monotone_steps(self):
        pat = JumpPattern(5, 3)
        assert list(pat.indicators()) == [0, 0, 1, 1, 1]
        assert list(JumpPattern(5, None).indicators()) == [0] * 5

    @pytest.mark.parametrize("p", [0.01, 0.0188, 0.5, 0.99])
    def test_weights_sum_to_one(self, p):
        total = sum(math.exp(pat.log_weight(p)) for pat in enumerate_patterns(8))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_weight_gradient_matches_finite_differences(self):
        p, h = 0.17, 1e-7
        for pat in enumerate_patterns(6):
            fd = (pat.log_weight(p + h) - pat.log_weight(p - h)) / (2 * h)
            assert pat.d_log_weight(p) == pytest.approx(fd, rel=1e-6)

    def test_out_of_range_jump_year(self):
        with pytest.raises(ValueError):
            JumpPattern(4, 5)
        with pytest.raises(ValueError):
            JumpPattern(4, 0)


class TestMeanFactors:
    def test_no_jump_pattern_is_zero(self, rng):
        params = random_params(rng, 3, 2)
        L = mean_factors(JumpPattern(6, None), params)
        assert np.all(L == 0.0)

    def test_indicator_kernel_enter_exit(self, rng):
        # gamma = 0: the shock enters at the jump year and leaves next year
        params = random_params(rng, 2, 2)
        params.gamma = np.zeros(2)
        L = mean_factors(JumpPattern(6, 3), params)
        expected = np.zeros((5, 2))
        expected[1] = 1.0      # improvement into year 3
        expected[2] = -1.0     # improvement out of year 3
        assert np.allclose(L, expected)

    def test_batched_equals_per_pattern(self, rng):
        params = random_params(rng, 3, 2)
        T = 7
        Lall = _mean_factors_all(params, T)
        for i, pat in enumerate(enumerate_patterns(T)):
            assert np.allclose(Lall[i], mean_factors(pat, params), atol=1e-14)


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------

class TestMoments:
    def test_yearly_blocks_match_full_assembly(self, rng):
        params = random_params(rng, 3, 2)
        pat = JumpPattern(6, 2)
        full = assemble_full_moments(params, pat)
        XC = params.X * params.C
        for t in range(2, 7):
            zeta, cov = conditional_moments_year(params, pat, t)
            i = (t - 2) * XC
            assert np.allclose(full.mean[i:i + XC], zeta, atol=1e-12)
            assert np.allclose(full.cov[i:i + XC, i:i + XC], cov, atol=1e-12)

    def test_full_assembly_matches_scalar_loops(self, rng):
        params = random_params(rng, 2, 2)
        for t_jump in (1, 4, None):
            pat = JumpPattern(5, t_jump)
            full = assemble_full_moments(params, pat)
            mean, cov = dense_pattern_moments(params, 5, t_jump)
            assert np.allclose(full.mean, mean, atol=1e-12)
            assert np.allclose(full.cov, cov, atol=1e-12)

    def test_covariance_symmetric_positive_definite(self, rng):
        params = random_params(rng, 3, 2)
        full = assemble_full_moments(params, JumpPattern(6, 3))
        assert np.allclose(full.cov, full.cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(full.cov).min() > 0

    def test_year_out_of_range(self, rng):
        params = random_params(rng, 2, 2)
        with pytest.raises(DimensionMismatchError):
            conditional_moments_year(params, JumpPattern(5, 2), 1)
        with pytest.raises(DimensionMismatchError):
            conditional_moments_year(params, JumpPattern(5, 2), 6)


# ---------------------------------------------------------------------------
# Mixture likelihood vs the brute-force oracle
# ---------------------------------------------------------------------------

class TestMixtureLoglik:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            X = int(rng.integers(1, 4))
            C = int(rng.integers(1, 3))
            T = int(rng.integers(4, 9))
            params = random_params(rng, X, C)
            z = rng.normal(scale=0.3, size=(X, T - 1, C))
            got = mixture_loglik(params, z)
            want = dense_mixture_oracle(params, z)
            assert got == pytest.approx(want, rel=1e-10)

    def test_single_pattern_matches_dense_logpdf(self, rng):
        params = random_params(rng, 2, 2)
        T = 6
        z = rng.normal(scale=0.3, size=(2, T - 1, 2))
        zvec = z.transpose(1, 2, 0).reshape(-1)
        mean, cov = dense_pattern_moments(params, T, None)
        want = multivariate_normal.logpdf(zvec, mean, cov)
        assert single_pattern_loglik(params, z) == pytest.approx(want,
                                                                 rel=1e-10)

    def test_per_pattern_densities_match_dense_logpdf(self, rng):
        params = random_params(rng, 2, 2)
        T = 6
        z = rng.normal(scale=0.3, size=(2, T - 1, 2))
        zvec = z.transpose(1, 2, 0).reshape(-1)
        _, parts = mixture_loglik(params, z, return_parts=True)
        for i, pat in enumerate(enumerate_patterns(T)):
            mean, cov = dense_pattern_moments(params, T, pat.t_jump)
            want = multivariate_normal.logpdf(zvec, mean, cov)
            assert parts["log_densities"][i] == pytest.approx(want, rel=1e-10)

    def test_responsibilities_sum_to_one(self, rng):
        params = random_params(rng, 2, 2)
        z = rng.normal(scale=0.3, size=(2, 5, 2))
        _, parts = mixture_loglik(params, z, return_parts=True)
        assert np.sum(parts["responsibilities"]) == pytest.approx(1.0)

    def test_trend_gauge_invariance(self, rng):
        params = random_params(rng, 3, 2)
        z = rng.normal(scale=0.3, size=(3, 5, 2))
        base = mixture_loglik(params, z)
        s = 2.7
        scaled = params.copy()
        scaled.B = params.B * s
        scaled.D = params.D / s
        scaled.sigma_eta = params.sigma_eta / s
        assert mixture_loglik(scaled, z) == pytest.approx(base, rel=1e-9)
        scaled2 = params.copy()
        scaled2.b = params.b * s
        scaled2.d = params.d / s
        scaled2.sigma_xi = params.sigma_xi / s
        assert mixture_loglik(scaled2, z) == pytest.approx(base, rel=1e-9)

    def test_jump_free_data_prefers_small_p(self, rng):
        # with no jump signal, lowering p should not hurt the likelihood much
        params = random_params(rng, 2, 2, p=0.3)
        params.mu = np.full((2, 2), 2.0)      # huge would-be jumps
        z = rng.normal(scale=0.05, size=(2, 7, 2))
        lo = params.copy()
        lo.p = 0.01
        assert mixture_loglik(lo, z) > mixture_loglik(params, z)


# ---------------------------------------------------------------------------
# Parameter set plumbing
# ---------------------------------------------------------------------------

class TestParamSet:
    def test_free_parameter_count(self, rng):
        params = random_params(rng, 13, 6)
        # X + 1 + 1 + C + X + 1 + 1 + X*C + 1 + 3C + 2 at (13, 6)
        assert params.n_free_params == 135

    def test_mu_flat_is_cause_major(self, rng):
        params = random_params(rng, 3, 2)
        flat = params.mu_flat
        for c in range(2):
            for x in range(3):
                assert flat[c * 3 + x] == params.mu[x, c]

    def test_round_trip_is_exact(self, rng):
        params = random_params(rng, 3, 2)
        back = ParamSet.from_dict(params.to_dict())
        for name in ("B", "phi", "b", "mu", "gamma", "alpha", "beta"):
            assert np.array_equal(getattr(back, name), getattr(params, name))
        for name in ("D", "sigma_eta", "d", "sigma_xi", "sigma_J", "p",
                     "sigma_e"):
            assert getattr(back, name) == getattr(params, name)

    def test_json_round_trip(self, rng, tmp_path):
        params = random_params(rng, 2, 2)
        path = tmp_path / "params.json"
        params.to_json(path)
        back = ParamSet.from_json(path)
        assert np.array_equal(back.mu, params.mu)
        assert back.sigma_e == params.sigma_e

    def test_copy_is_independent(self, rng):
        params = random_params(rng, 2, 2)
        c = params.copy()
        c.B[0] = 99.0
        assert params.B[0] != 99.0


class TestInformationCriteria:
    def test_published_scale_values(self):
        out = information_criteria(4542.2, 135, 4290)
        assert out["aic"] == pytest.approx(-8814.4, abs=0.5)
        assert out["bic"] == pytest.approx(-7955.2, abs=0.5)

    def test_aic_bic_formulas(self):
        out = information_criteria(10.0, 3, 50)
        assert out["aic"] == pytest.approx(2 * 3 - 2 * 10.0)
        assert out["bic"] == pytest.approx(3 * math.log(50) - 2 * 10.0)
        assert out["n_params"] == 3 and out["n_obs"] == 50
