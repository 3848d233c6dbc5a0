import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from scipy.optimize import linprog

from dassim.errors import NumericalError
from dassim.prob import GaussianDensity, GridDensity1D, matrix_sqrt
from dassim.transport import (
    CouplingMatrix,
    GridDensity2D,
    GridMap1D,
    discrete_optimal_coupling,
    gaussian_affine_coupling,
    gaussian_optimal_map,
    gaussian_optimal_map_factored,
    independent_coupling,
    knothe_rosenblatt_2d,
    northwest_corner,
    quantile_transport_1d,
    squared_distance_cost,
    wasserstein2_1d,
)

from conftest import random_spd


def normal_grid(m=0.0, s=1.0, lo=-10, hi=10, n=4001):
    return GridDensity1D.from_pdf(stats.norm(m, s).pdf, np.linspace(lo, hi, n))


class TestQuantileTransport:
    def test_identity(self):
        d = normal_grid()
        T = quantile_transport_1d(d, d)
        x = np.linspace(-4, 4, 41)
        np.testing.assert_allclose(T(x), x, atol=1e-6)

    def test_uniform_to_normal_median(self):
        u = GridDensity1D(np.linspace(0, 1, 1001), np.ones(1001))
        T = quantile_transport_1d(u, normal_grid())
        assert abs(T(0.5)) < 1e-6

    def test_affine_case(self):
        T = quantile_transport_1d(normal_grid(), normal_grid(1.5, 2.0, -20, 20, 8001))
        x = np.linspace(-3, 3, 61)
        np.testing.assert_allclose(T(x), 1.5 + 2.0 * x, atol=1e-3)

    def test_pushforward_ks(self, rng):
        src = normal_grid()
        dst = GridDensity1D.from_pdf(stats.gamma(3.0).pdf, np.linspace(0, 30, 6001))
        T = quantile_transport_1d(src, dst)
        assert np.all(np.diff(T.images) >= 0)
        y = T(rng.standard_normal(10_000))
        assert stats.kstest(y, stats.gamma(3.0).cdf).statistic <= 0.02

    def test_gap_raises(self):
        x = np.linspace(0, 3, 301)
        v = np.where((x > 1) & (x < 2), 0.0, 1.0)
        with pytest.raises(NumericalError, match="non-invertible"):
            quantile_transport_1d(normal_grid(), GridDensity1D(x, v))

    def test_gridmap_rejects_decreasing(self):
        with pytest.raises(ValueError):
            GridMap1D([0.0, 1.0], [1.0, 0.0])


class TestWasserstein:
    def test_self(self):
        d = normal_grid()
        assert wasserstein2_1d(d, d) == pytest.approx(0.0, abs=1e-9)

    def test_translated_gaussians(self):
        assert wasserstein2_1d(normal_grid(), normal_grid(2.0)) == pytest.approx(2.0, abs=1e-3)

    def test_spikes(self):
        x = np.linspace(0, 10, 1001)
        h = x[1] - x[0]

        def spike(a):
            return GridDensity1D(x, np.maximum(0.0, 1 - np.abs(x - a) / h))

        assert wasserstein2_1d(spike(2.0), spike(7.0)) == pytest.approx(5.0, abs=h)


class TestKnotheRosenblatt:
    x1 = np.linspace(-6, 6, 161)
    x2 = np.linspace(-6, 6, 161)

    def grid(self, mean, cov):
        g = stats.multivariate_normal(mean, cov)
        return GridDensity2D.from_pdf(lambda P: g.pdf(P.T), self.x1, self.x2)

    def test_identity(self):
        d = self.grid([0, 0], np.eye(2))
        T = knothe_rosenblatt_2d(d, d)
        P = np.array([[0.3, -1.0, 2.0], [0.5, 1.2, -0.7]])
        np.testing.assert_allclose(T(P), P, atol=2e-3)

    def test_independent_is_componentwise(self):
        src = self.grid([0, 0], np.eye(2))
        dst = self.grid([1, -1], np.diag([0.5, 2.0]))
        T = knothe_rosenblatt_2d(src, dst)
        P = np.array([[0.3, -1.0, 1.5], [0.5, 1.2, -0.7]])
        expect = np.vstack([1 + np.sqrt(0.5) * P[0], -1 + np.sqrt(2.0) * P[1]])
        np.testing.assert_allclose(T(P), expect, atol=5e-3)

    def test_pushforward_tv(self, rng):
        src = self.grid([0, 0], np.eye(2))
        C = np.array([[1.0, 0.6], [0.6, 1.0]])
        T = knothe_rosenblatt_2d(src, self.grid([0.5, 0], C))
        Y = T(rng.standard_normal((2, 100_000)))
        edges = np.linspace(-4, 4, 17)
        H, _, _ = np.histogram2d(Y[0], Y[1], bins=[edges + 0.5, edges])
        ref = rng.multivariate_normal([0.5, 0], C, 400_000).T
        H2, _, _ = np.histogram2d(ref[0], ref[1], bins=[edges + 0.5, edges])
        tv = 0.5 * np.abs(H / Y.shape[1] - H2 / ref.shape[1]).sum()
        assert tv <= 0.05

    def test_order_option(self):
        src = self.grid([0, 0], np.eye(2))
        dst = self.grid([0, 0], [[1.0, 0.5], [0.5, 1.0]])
        a = knothe_rosenblatt_2d(src, dst, order=(0, 1))
        b = knothe_rosenblatt_2d(src, dst, order=(1, 0))
        p = np.array([1.0, 1.0])
        assert not np.allclose(a(p), b(p), atol=1e-2)  # the rearrangement depends on the ordering
        with pytest.raises(ValueError):
            knothe_rosenblatt_2d(src, dst, order=(0, 0))


class TestGaussianMaps:
    def test_affine_identity_cov(self):
        g1 = GaussianDensity([0.0, 1.0], [[2.0, 0.3], [0.3, 1.0]])
        g2 = GaussianDensity([1.0, 1.0], g1.cov)
        T = gaussian_affine_coupling(g1, g2)
        np.testing.assert_allclose(T.linear, np.eye(2), atol=1e-12)

    def test_affine_scalar(self):
        T = gaussian_affine_coupling(GaussianDensity([1.0], [[4.0]]), GaussianDensity([-1.0], [[9.0]]))
        assert T(np.array([3.0]))[0] == pytest.approx(-1.0 + 1.5 * 2.0)

    def test_pushforward_covariances(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 9))
            g1 = GaussianDensity(rng.standard_normal(n), random_spd(rng, n))
            g2 = GaussianDensity(rng.standard_normal(n), random_spd(rng, n))
            for T in (gaussian_affine_coupling(g1, g2), gaussian_optimal_map(g1, g2)):
                pf = T.pushforward(g1)
                assert np.abs(pf.cov - g2.cov).max() <= 1e-10 * max(1.0, np.abs(g2.cov).max())
                np.testing.assert_allclose(pf.mean, g2.mean, atol=1e-12)
            L = gaussian_optimal_map(g1, g2).linear
            np.testing.assert_array_equal(L, L.T)
            assert np.linalg.eigvalsh(L).min() >= -1e-12

    def test_optimal_cost_below_affine(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 9))
            g1 = GaussianDensity(rng.standard_normal(n), random_spd(rng, n))
            g2 = GaussianDensity(rng.standard_normal(n), random_spd(rng, n))
            c_opt = gaussian_optimal_map(g1, g2).transport_cost(g1)
            c_aff = gaussian_affine_coupling(g1, g2).transport_cost(g1)
            assert c_opt <= c_aff + 1e-9 * max(1.0, c_aff)

    def test_optimal_identity_and_commuting(self):
        S = np.array([[2.0, 0.3], [0.3, 1.0]])
        T = gaussian_optimal_map(GaussianDensity([0, 0], S), GaussianDensity([0, 0], S))
        np.testing.assert_allclose(T.linear, np.eye(2), atol=1e-12)
        T = gaussian_optimal_map(GaussianDensity([0, 0], np.diag([1.0, 4.0])), GaussianDensity([0, 0], np.diag([9.0, 1.0])))
        np.testing.assert_allclose(T.linear, np.diag([3.0, 0.5]), atol=1e-12)

    def test_factored_matches(self, rng):
        S1, S2 = random_spd(rng, 3), random_spd(rng, 3)
        m1, m2 = rng.standard_normal(3), rng.standard_normal(3)
        T = gaussian_optimal_map_factored(m1, S1, m2, matrix_sqrt(S2))
        ref = gaussian_optimal_map(GaussianDensity(m1, S1), GaussianDensity(m2, S2))
        np.testing.assert_allclose(T.linear, ref.linear, atol=1e-8)
        np.testing.assert_allclose(T.offset, ref.offset, atol=1e-12)

    def test_factored_scalar(self):
        T = gaussian_optimal_map_factored([1.0], [[4.0]], [2.0], [[3.0]])
        assert T(np.array([3.0]))[0] == pytest.approx(2.0 + 1.5 * 2.0)

    def test_factored_rank_deficient(self, rng):
        S1 = random_spd(rng, 3)
        A = rng.standard_normal((3, 3))
        A[:, 2] = 0.0
        T = gaussian_optimal_map_factored(np.zeros(3), S1, np.zeros(3), A)
        C = T.linear @ S1 @ T.linear.T
        np.testing.assert_allclose(C, A @ A.T, atol=1e-10)

    def test_factored_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_optimal_map_factored([0.0, 0.0], np.eye(2), [0.0], np.eye(2))


def lp_reference(r, c, C):
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([r, c]), bounds=(0, None), method="highs")
    return res.fun


class TestDiscreteCoupling:
    def test_diagonal(self):
        x = np.arange(5.0)
        T = discrete_optimal_coupling(np.full(5, 0.2), np.full(5, 0.2), squared_distance_cost(x))
        np.testing.assert_allclose(T.entries, np.eye(5) / 5, atol=1e-15)

    def test_forced(self):
        T = discrete_optimal_coupling([1.0, 0.0], [0.5, 0.5], np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert T.entries[0, 0] == 0.5 and T.entries[0, 1] == 0.5

    def test_sorted_1d_is_monotone(self, rng):
        for _ in range(20):
            M = int(rng.integers(2, 30))
            x = np.sort(rng.standard_normal(M))
            y = np.sort(rng.standard_normal(M))
            w = rng.random(M)
            w /= w.sum()
            T = discrete_optimal_coupling(np.full(M, 1 / M), w, squared_distance_cost(x, y))
            nw, _ = northwest_corner(np.full(M, 1 / M), w)
            cost = squared_distance_cost(x, y)
            assert T.cost(cost) == pytest.approx(float(np.sum(nw * cost)), abs=1e-12)
            assert T.cost(cost) == pytest.approx(lp_reference(np.full(M, 1 / M), w, cost), abs=1e-8)

    def test_random_against_linprog(self, rng):
        for M in (2, 3, 7, 16, 40):
            r = rng.random(M); r /= r.sum()
            c = rng.random(M); c /= c.sum()
            C = rng.random((M, M))
            T = discrete_optimal_coupling(r, c, C)
            assert T.cost(C) == pytest.approx(lp_reference(r, c, C), abs=1e-8)
            np.testing.assert_allclose(T.entries.sum(axis=1), r, atol=1e-8)
            np.testing.assert_allclose(T.entries.sum(axis=0), c, atol=1e-8)
            assert T.cost(C) <= independent_coupling(r, c).cost(C) + 1e-12

    def test_rectangular(self, rng):
        r = np.full(3, 1 / 3)
        c = np.array([0.1, 0.2, 0.3, 0.4])
        C = rng.random((3, 4))
        assert discrete_optimal_coupling(r, c, C).cost(C) == pytest.approx(lp_reference(r, c, C), abs=1e-10)

    def test_infeasible(self):
        with pytest.raises(ValueError, match="infeasible"):
            discrete_optimal_coupling([0.5, 0.6], [0.5, 0.5], np.zeros((2, 2)))

    def test_independent_has_zero_covariance(self, rng):
        w = rng.random(6); w /= w.sum()
        T = independent_coupling(np.full(6, 1 / 6), w)
        x = rng.standard_normal(6)
        assert abs(T.covariance(x, x)[0, 0]) < 1e-14

    def test_covariance_ranks_reverse_cost(self, rng):
        # for fixed marginals, E|x-y|^2 = const - 2 cov(x, y)
        x = rng.standard_normal(5)
        y = rng.standard_normal(5)
        r = np.full(5, 0.2)
        C = squared_distance_cost(x, y)
        plans = [independent_coupling(r, r), discrete_optimal_coupling(r, r, C),
                 CouplingMatrix(np.eye(5) / 5, r, r), CouplingMatrix(np.eye(5)[::-1] / 5, r, r)]
        costs = [p.cost(C) for p in plans]
        covs = [p.covariance(x, y)[0, 0] for p in plans]
        assert np.argsort(costs).tolist() == np.argsort(covs)[::-1].tolist()

    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    def test_property_marginals_and_optimality(self, M, seed):
        g = np.random.default_rng(seed)
        r = g.random(M) + 0.01; r /= r.sum()
        c = g.random(M) + 0.01; c /= c.sum()
        C = g.random((M, M))
        T = discrete_optimal_coupling(r, c, C)
        assert np.all(T.entries >= -1e-12)
        np.testing.assert_allclose(T.entries.sum(axis=1), r, atol=1e-8)
        np.testing.assert_allclose(T.entries.sum(axis=0), c, atol=1e-8)
        assert T.cost(C) <= independent_coupling(r, c).cost(C) + 1e-12

    def test_coupling_validates(self):
        with pytest.raises(ValueError):
            CouplingMatrix(np.eye(2), [0.5, 0.5], [0.5, 0.5])
