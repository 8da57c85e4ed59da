import math

import numpy as np
import pytest
import scipy.stats as ss
from hypothesis import given, settings
from scipy.special import betainc as ss_betainc
from hypothesis import strategies as st

from oracles import brute_wilcoxon_one_sided, normal_equations
from srfe import stats


class TestTDistribution:
    @pytest.mark.parametrize("df", [1, 2, 3, 5, 10, 30, 100, 1000])
    @pytest.mark.parametrize("t", [-40.0, -5.0, -2.0, -0.5, 0.0, 0.3, 1.0, 2.5, 8.0, 60.0])
    def test_against_scipy(self, t, df):
        assert abs(stats.t_cdf(t, df) - ss.t.cdf(t, df)) < 1e-8
        assert abs(stats.t_sf_two_sided(t, df) - 2 * ss.t.sf(abs(t), df)) < 1e-8

    @pytest.mark.parametrize("t", [5.960464477539063e-08, -1e-9, 1e-300])
    def test_tiny_t(self, t):
        assert stats.t_cdf(t, 32.0) == pytest.approx(ss.t.cdf(t, 32.0), abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-50, 50), st.floats(0.5, 500))
    def test_property_against_scipy(self, t, df):
        assert abs(stats.t_cdf(t, df) - ss.t.cdf(t, df)) < 1e-8

    @pytest.mark.parametrize("a, b, x", [(0.5, 0.5, 0.3), (2, 3, 0.9), (10, 0.5, 0.99), (1, 1, 0.25)])
    def test_betainc(self, a, b, x):
        assert stats.betainc(a, b, x) == pytest.approx(ss_betainc(a, b, x), abs=1e-12)

    def test_normal_sf(self):
        for z in (-3.0, 0.0, 1.0, 1.96, 6.0):
            assert stats.normal_sf(z) == pytest.approx(ss.norm.sf(z), rel=1e-12)


class TestRanks:
    def test_average_ties(self):
        np.testing.assert_array_equal(stats.rankdata([3, 1, 3, 2]), [3.5, 1, 3.5, 2])

    def test_spearman_against_scipy(self, rng):
        x, y = rng.normal(size=30), rng.normal(size=30)
        y[:5] = y[5:10]
        assert stats.spearman(x, y) == pytest.approx(ss.spearmanr(x, y)[0], abs=1e-12)


class TestWilcoxon:
    def test_all_positive(self):
        assert stats.wilcoxon_signed_rank(np.arange(1, 51)) < 1e-9

    def test_symmetric_pairs(self):
        vals = [s * k for k in range(1, 11) for s in (1, -1)]
        assert stats.wilcoxon_signed_rank(vals) == pytest.approx(0.5, abs=0.05)

    def test_three_pairs_exact(self):
        assert stats.wilcoxon_signed_rank([1, 2, 3, -1, -2, -3]) == pytest.approx(0.5, abs=1e-12)

    def test_mid_p_matches_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            n = int(rng.integers(6, 13))
            vals = np.round(rng.normal(0.3, 1, size=n), 1)
            if np.count_nonzero(vals) < 6:
                continue
            ge, eq = brute_wilcoxon_one_sided(vals)
            assert stats.wilcoxon_signed_rank(vals) == pytest.approx(ge - eq / 2, abs=1e-12)

    def test_large_sample_against_normal_approximation(self, rng):
        vals = rng.normal(0.2, 1, size=80)
        res = ss.wilcoxon(vals, alternative="greater", method="approx", correction=False)
        assert stats.wilcoxon_signed_rank(vals) == pytest.approx(res.pvalue, rel=1e-9)

    def test_too_few(self):
        with pytest.raises(stats.TooFewSamples):
            stats.wilcoxon_signed_rank([1, 2, 3, 4, 5])

    def test_all_zero_is_neutral(self):
        assert stats.wilcoxon_signed_rank([0.0] * 8) == 0.5

    def test_sign_test(self):
        assert stats.sign_test([1.0] * 10) == pytest.approx(2.0 ** -10)
        assert stats.sign_test([1.0, -1.0] * 5) > 0.5


class TestOlsInference:
    def test_against_oracle(self, rng):
        X = rng.normal(size=(60, 3))
        y = X @ [1.0, -2.0, 0.5] + 3 + rng.normal(size=60)
        fit = stats.ols_inference(X, y, ["a", "b", "c"])
        np.testing.assert_allclose(fit.coefficients, normal_equations(X, y), rtol=1e-9)
        A = np.column_stack([np.ones(60), X])
        res = y - A @ fit.coefficients
        cov = np.linalg.inv(A.T @ A) * (res @ res) / (60 - 4)
        np.testing.assert_allclose(fit.std_errors, np.sqrt(np.diag(cov)), rtol=1e-9)
        tvals = fit.coefficients / fit.std_errors
        np.testing.assert_allclose(fit.p_values, 2 * ss.t.sf(np.abs(tvals), 56), atol=1e-10)
        assert all(0.0 <= p <= 1.0 for p in fit.p_values)
        assert len(fit.coefficients) == 4

    def test_rank_deficient(self, rng):
        X = np.column_stack([rng.normal(size=20), np.full(20, 2.0)])
        with pytest.raises(stats.RankDeficient):
            stats.ols_inference(X, rng.normal(size=20), ["a", "b"])

    def test_too_few(self, rng):
        with pytest.raises(stats.TooFewSamples):
            stats.ols_inference(rng.normal(size=(3, 2)), rng.normal(size=3), ["a", "b"])

    def test_r_squared_matches_scipy_linregress(self, rng):
        x = rng.normal(size=40)
        y = 2 * x + rng.normal(size=40)
        fit = stats.ols_inference(x[:, None], y, ["x"])
        lr = ss.linregress(x, y)
        assert fit.r_squared == pytest.approx(lr.rvalue ** 2, rel=1e-10)
        assert fit.p_values[1] == pytest.approx(lr.pvalue, rel=1e-6)
        assert math.isfinite(fit.std_errors[0])
