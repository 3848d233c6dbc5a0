import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from dassim.errors import NumericalError
from dassim.prob import (
    GaussianDensity,
    GaussianMixture,
    GridDensity1D,
    WeightedEnsemble,
    empirical_cov,
    empirical_mean,
    gaussian_conditional,
    gaussian_log_pdf,
    laplace_as_mixture,
    matrix_sqrt,
    pinv_sqrt,
    point_estimate,
)

from conftest import random_spd


class TestGaussianLogPdf:
    def test_standard_normal_at_zero(self):
        assert gaussian_log_pdf(GaussianDensity([0.0], [[1.0]]), [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_2d_at_origin(self):
        g = GaussianDensity(np.zeros(2), np.eye(2))
        assert gaussian_log_pdf(g, np.zeros(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-14)

    def test_scaled(self):
        g = GaussianDensity([1.0], [[4.0]])
        assert gaussian_log_pdf(g, [3.0]) == pytest.approx(-0.5 * math.log(8 * math.pi) - 0.5, abs=1e-14)

    def test_against_scipy(self, rng):
        S = random_spd(rng, 4)
        m = rng.standard_normal(4)
        X = rng.standard_normal((4, 7))
        ref = stats.multivariate_normal(m, S).logpdf(X.T)
        np.testing.assert_allclose(GaussianDensity(m, S).log_pdf(X), ref, rtol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_log_pdf(GaussianDensity(np.zeros(2), np.eye(2)), [0.0, 0.0, 0.0])

    def test_non_finite(self):
        with pytest.raises(ValueError):
            gaussian_log_pdf(GaussianDensity([0.0], [[1.0]]), [np.nan])

    def test_integrates_to_one_1d(self):
        g = GaussianDensity([0.3], [[2.0]])
        x = np.linspace(0.3 - 8 * math.sqrt(2), 0.3 + 8 * math.sqrt(2), 4001)
        assert np.trapezoid(g.pdf(x[None, :]), x) == pytest.approx(1.0, abs=1e-6)

    def test_integrates_to_one_2d(self, rng):
        S = np.array([[1.0, 0.4], [0.4, 0.5]])
        g = GaussianDensity([0.0, 1.0], S)
        x1 = np.linspace(-8, 8, 401)
        x2 = np.linspace(1 - 8 * math.sqrt(0.5), 1 + 8 * math.sqrt(0.5), 401)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        p = g.pdf(np.vstack([X1.ravel(), X2.ravel()])).reshape(X1.shape)
        assert np.trapezoid(np.trapezoid(p, x2, axis=1), x1) == pytest.approx(1.0, abs=1e-6)


class TestGaussianDensity:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            GaussianDensity([0, 0], [[1.0, 0.5], [0.0, 1.0]])

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            GaussianDensity([0, 0], [[1.0, 2.0], [2.0, 1.0]])

    def test_immutable(self):
        g = GaussianDensity([0.0], [[1.0]])
        with pytest.raises(ValueError):
            g.mean[0] = 1.0

    def test_sample_moments(self, rng):
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        g = GaussianDensity([1.0, -1.0], S)
        X = g.sample(rng, 100_000)
        e = WeightedEnsemble(X)
        se = np.sqrt(np.diag(S) / X.shape[1])
        assert np.all(np.abs(empirical_mean(e) - g.mean) < 3 * se)
        # var of sample variance ~ 2 s^4 / n
        np.testing.assert_allclose(empirical_cov(e), S, atol=3 * math.sqrt(2 * 4 / 1e5))


class TestEmpiricalMoments:
    def test_mean_examples(self):
        assert empirical_mean(WeightedEnsemble([[1.0, 3.0]]))[0] == 2.0
        assert empirical_mean(WeightedEnsemble([[0.0, 1.0]], [0.25, 0.75]))[0] == 0.75
        assert empirical_mean(WeightedEnsemble([[5.0]]))[0] == 5.0

    def test_cov_examples(self):
        assert empirical_cov(WeightedEnsemble([[-1.0, 1.0]]))[0, 0] == pytest.approx(2.0)
        np.testing.assert_array_equal(empirical_cov(WeightedEnsemble(np.ones((2, 5)))), np.zeros((2, 2)))
        X = np.outer([1.0, 2.0], np.arange(6.0))
        assert np.linalg.matrix_rank(empirical_cov(WeightedEnsemble(X))) == 1

    def test_degenerate(self):
        with pytest.raises(NumericalError, match="degenerate"):
            empirical_cov(WeightedEnsemble([[1.0]]))

    def test_uniform_matches_numpy(self, rng):
        X = rng.standard_normal((3, 11))
        np.testing.assert_allclose(empirical_cov(WeightedEnsemble(X)), np.cov(X), rtol=1e-12)

    def test_weighted_matches_numpy_aweights(self, rng):
        X = rng.standard_normal((3, 11))
        w = rng.random(11)
        w /= w.sum()
        np.testing.assert_allclose(empirical_cov(WeightedEnsemble(X, w)), np.cov(X, aweights=w), rtol=1e-12)

    @given(arrays(float, (2, 6), elements=st.floats(-100, 100)),
           arrays(float, 6, elements=st.floats(0.01, 1.0)))
    def test_cov_is_psd(self, X, w):
        P = empirical_cov(WeightedEnsemble(X, w / w.sum()))
        np.testing.assert_allclose(P, P.T)
        assert np.linalg.eigvalsh(P).min() >= -1e-9 * max(1.0, np.abs(P).max())


class TestWeightedEnsemble:
    def test_default_uniform(self):
        e = WeightedEnsemble(np.zeros((2, 4)))
        np.testing.assert_array_equal(e.weights, np.full(4, 0.25))
        assert e.is_uniform and e.dim == 2 and e.size == 4

    @pytest.mark.parametrize("w", [[0.5, 0.6], [1.5, -0.5], [np.nan, 1.0], [1.0]])
    def test_rejects_bad_weights(self, w):
        with pytest.raises(ValueError):
            WeightedEnsemble(np.zeros((1, 2)), w)

    @given(arrays(float, 5, elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 1e-3))
    def test_normalised_weights_accepted(self, w):
        e = WeightedEnsemble(np.zeros((1, 5)), w / w.sum())
        assert abs(e.weights.sum() - 1) <= 1e-10 and np.all(e.weights >= 0)


class TestMatrixSqrt:
    def test_examples(self):
        np.testing.assert_array_equal(matrix_sqrt(np.eye(3)), np.eye(3))
        np.testing.assert_allclose(matrix_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-15)

    def test_random_spd(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 17))
            S = random_spd(rng, n)
            R = matrix_sqrt(S)
            np.testing.assert_array_equal(R, R.T)
            assert np.linalg.norm(R @ R - S) / np.linalg.norm(S) <= 1e-10

    def test_not_psd(self):
        with pytest.raises(NumericalError, match="not PSD"):
            matrix_sqrt(np.diag([1.0, -0.1]))

    def test_tiny_negative_floored(self):
        R = matrix_sqrt(np.diag([1.0, -1e-14]))
        np.testing.assert_allclose(R, np.diag([1.0, 0.0]))

    def test_asymmetric(self):
        with pytest.raises(ValueError):
            matrix_sqrt(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_pinv_sqrt_rank_deficient(self):
        S = np.diag([4.0, 0.0])
        np.testing.assert_allclose(pinv_sqrt(S), np.diag([0.5, 0.0]))


class TestGaussianConditional:
    def test_independent(self):
        g = gaussian_conditional(GaussianDensity([1.0, 2.0], np.diag([3.0, 4.0])), 5.0)
        assert g.mean[0] == 1.0 and g.cov[0, 0] == 3.0

    def test_at_mean(self):
        g = gaussian_conditional(GaussianDensity([1.0, 2.0], [[1.0, 0.5], [0.5, 1.0]]), 2.0)
        assert g.mean[0] == 1.0

    def test_example(self):
        g = gaussian_conditional(GaussianDensity([1.0, 2.0], [[1.0, 0.5], [0.5, 1.0]]), 3.0)
        assert g.mean[0] == pytest.approx(1.5)
        assert g.cov[0, 0] == pytest.approx(0.75)

    def test_degenerate_y(self):
        with pytest.raises(ValueError):
            gaussian_conditional(GaussianDensity([0.0, 0.0], np.diag([1.0, 0.0])), 0.0)


class TestLaplaceMixture:
    lam = 1.5

    def grid(self):
        return np.geomspace(1e-6, 60 / (0.5 * self.lam**2), 4000)

    def test_weights_sum(self):
        m = laplace_as_mixture(self.lam, self.grid())
        assert abs(m.weights.sum() - 1.0) <= 1e-12

    def test_density_at_zero(self):
        m = laplace_as_mixture(self.lam, self.grid())
        assert m.pdf(np.zeros((1, 1)))[0] == pytest.approx(self.lam / 2, rel=0.02)

    def test_variance(self):
        m = laplace_as_mixture(self.lam, self.grid())
        assert m.cov[0, 0] == pytest.approx(2 / self.lam**2, rel=0.02)

    def test_density_shape(self):
        m = laplace_as_mixture(self.lam, self.grid())
        x = np.array([[0.5, 1.0, 2.0]])
        np.testing.assert_allclose(m.pdf(x), self.lam / 2 * np.exp(-self.lam * x[0]), rtol=0.02)

    @pytest.mark.parametrize("lam,s", [(0.0, [1.0, 2.0]), (1.0, [0.0, 1.0]), (1.0, [2.0, 1.0]), (1.0, [1.0])])
    def test_errors(self, lam, s):
        with pytest.raises(ValueError):
            laplace_as_mixture(lam, s)

    def test_mixture_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            GaussianMixture([0.5, 0.6], (GaussianDensity([0.0], [[1.0]]),) * 2)


class TestPointEstimate:
    def test_mean(self, rng):
        e = WeightedEnsemble(rng.standard_normal((2, 9)))
        np.testing.assert_array_equal(point_estimate(e, "mean"), empirical_mean(e))

    @pytest.mark.parametrize("loss", ["mean", "median", "map"])
    def test_point_mass(self, loss):
        e = WeightedEnsemble([[4.0, 1.0, 2.0]], [1.0, 0.0, 0.0])
        assert point_estimate(e, loss)[0] == 4.0

    def test_weighted_median(self):
        e = WeightedEnsemble([[0.0, 1.0, 10.0]], [0.4, 0.4, 0.2])
        assert point_estimate(e, "median")[0] == 1.0

    def test_unknown(self):
        with pytest.raises(ValueError):
            point_estimate(WeightedEnsemble([[0.0]]), "mode")


class TestGridDensity1D:
    def test_normalised_integral(self):
        d = GridDensity1D.from_pdf(lambda x: np.exp(-x**2), np.linspace(-6, 6, 301))
        assert d.integral() == pytest.approx(1.0, abs=1e-8)
        c = d.cdf()
        assert c[0] == 0.0 and c[-1] == 1.0 and np.all(np.diff(c) >= 0)

    def test_kde_moments(self, rng):
        s = rng.normal(2.0, 0.5, 5000)
        d = GridDensity1D.from_samples(s)
        assert d.nodes.size == 1024
        assert d.mean() == pytest.approx(s.mean(), abs=1e-3)
        assert d.var() == pytest.approx(0.25, rel=0.1)

    def test_rejects_bad_nodes(self):
        with pytest.raises(ValueError):
            GridDensity1D([0.0, 0.0, 1.0], [1.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            GridDensity1D([0.0, 1.0], [1.0, -1.0])
