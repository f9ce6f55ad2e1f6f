import numpy as np
import pytest
from scipy.special import roots_legendre
from scipy.stats import norm

from privmap.lti import GaussianDist, ModelError
from privmap.mvn import (IntegrationConfig, cell_pmf, integrate_boxes, integrate_grid, rect_prob,
                         renormalize)
from privmap.quantization import HyperRect

TIGHT = IntegrationConfig(abs_tol=1e-9, max_points=1 << 18)


def random_gaussian(rng, m):
    a = rng.normal(size=(m, m))
    return GaussianDist(rng.normal(size=m), a @ a.T + 0.5 * np.eye(m))


class TestRectProb:
    def test_half_line(self):
        r = rect_prob(GaussianDist(np.zeros(1), np.eye(1)), HyperRect(np.array([-np.inf]), np.array([0.0])))
        assert r.prob == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("m", [1, 2, 4, 6])
    def test_whole_space(self, m):
        g = random_gaussian(np.random.default_rng(m), m)
        r = rect_prob(g, HyperRect(np.full(m, -np.inf), np.full(m, np.inf)))
        assert r.prob == pytest.approx(1.0, abs=1e-12)

    def test_gauss_legendre_oracle(self):
        rho = 0.5
        g = GaussianDist(np.zeros(2), np.array([[1.0, rho], [rho, 1.0]]))
        x, w = roots_legendre(400)
        t = 0.5 * (x + 1.0)
        X, Y = np.meshgrid(t, t, indexing="ij")
        dens = np.exp(-(X ** 2 - 2 * rho * X * Y + Y ** 2) / (2 * (1 - rho ** 2))) / (2 * np.pi * np.sqrt(1 - rho ** 2))
        oracle = 0.25 * np.einsum("i,j,ij->", w, w, dens)
        r = rect_prob(g, HyperRect(np.zeros(2), np.ones(2)), IntegrationConfig(abs_tol=5e-8, max_points=1 << 20))
        assert r.converged
        assert abs(r.prob - oracle) < 1e-7

    def test_independent_product(self):
        g = GaussianDist(np.array([0.3, -0.2, 1.0]), np.diag([1.0, 2.0, 0.5]))
        lo, hi = np.array([-1.0, -0.5, 0.0]), np.array([0.5, 2.0, np.inf])
        exact = np.prod(norm.cdf(hi, g.mean, np.sqrt(np.diag(g.cov))) - norm.cdf(lo, g.mean, np.sqrt(np.diag(g.cov))))
        assert rect_prob(g, HyperRect(lo, hi), TIGHT).prob == pytest.approx(exact, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            rect_prob(GaussianDist(np.zeros(2), np.eye(2)), HyperRect(np.zeros(1), np.ones(1)))

    def test_singular_covariance(self):
        with pytest.raises((ModelError, ValueError)):
            integrate_boxes(GaussianDist(np.zeros(2), np.ones((2, 2))), np.zeros((1, 2)), np.ones((1, 2)))

    def test_error_estimate_respects_target(self):
        g = random_gaussian(np.random.default_rng(2), 4)
        r = rect_prob(g, HyperRect(g.mean - 1, g.mean + 1), IntegrationConfig(abs_tol=1e-5))
        assert r.converged and r.error <= 1e-5

    def test_budget_flag(self):
        g = random_gaussian(np.random.default_rng(2), 5)
        r = rect_prob(g, HyperRect(g.mean - 1, g.mean + 1), IntegrationConfig(abs_tol=1e-14, max_points=1 << 11))
        assert not r.converged


class TestProperties:
    def test_monotone_in_box(self):
        rng = np.random.default_rng(7)
        cfg = IntegrationConfig(abs_tol=1e-7)
        for _ in range(20):
            g = random_gaussian(rng, 3)
            lo = g.mean + rng.normal(size=3)
            hi = lo + rng.uniform(0.2, 2.0, size=3)
            small = rect_prob(g, HyperRect(lo, hi), cfg)
            big = rect_prob(g, HyperRect(lo - rng.uniform(0, 1, 3), hi + rng.uniform(0, 1, 3)), cfg)
            assert big.prob >= small.prob - (big.error + small.error)

    def test_additive_split(self):
        rng = np.random.default_rng(8)
        cfg = IntegrationConfig(abs_tol=1e-5)
        for _ in range(10):
            g = random_gaussian(rng, 3)
            lo = g.mean - rng.uniform(0.5, 2, 3)
            hi = g.mean + rng.uniform(0.5, 2, 3)
            cut = 0.5 * (lo[1] + hi[1])
            left_hi, right_lo = hi.copy(), lo.copy()
            left_hi[1] = right_lo[1] = cut
            res = integrate_boxes(g, np.array([lo, lo, right_lo]), np.array([hi, left_hi, hi]), cfg)
            assert res.converged
            assert abs(res.probs[0] - res.probs[1] - res.probs[2]) <= 2 * cfg.abs_tol

    def test_deterministic(self):
        g = random_gaussian(np.random.default_rng(9), 4)
        lo, hi = g.mean - 1, g.mean + 0.5
        a = integrate_boxes(g, lo[None], hi[None], IntegrationConfig(seed=4))
        b = integrate_boxes(g, lo[None], hi[None], IntegrationConfig(seed=4))
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_threads_do_not_change_results(self):
        rng = np.random.default_rng(10)
        g = random_gaussian(rng, 3)
        lo = g.mean + rng.normal(size=(64, 3))
        hi = lo + 1.0
        a = integrate_boxes(g, lo, hi, IntegrationConfig(abs_tol=1e-5))
        b = integrate_boxes(g, lo, hi, IntegrationConfig(abs_tol=1e-5), threads=4)
        np.testing.assert_array_equal(a.probs, b.probs)


class TestGrid:
    def test_matches_box_integration(self):
        g = random_gaussian(np.random.default_rng(3), 3)
        edges = [[-0.5, 0.5], [0.0], [-1.0, 0.0, 1.0]]
        cfg = IntegrationConfig(abs_tol=1e-5)
        grid = integrate_grid(g, edges, cfg)
        from privmap.mvn import _grid_limits
        boxes = integrate_boxes(g, *_grid_limits(edges), cfg)
        np.testing.assert_allclose(grid.probs, boxes.probs, rtol=0, atol=1e-12)

    def test_raw_sums_telescope(self):
        g = random_gaussian(np.random.default_rng(4), 5)
        edges = [np.sort(np.random.default_rng(i).normal(size=3)) for i in range(5)]
        res = integrate_grid(g, edges, IntegrationConfig(abs_tol=1e-4, max_points=1 << 12), order=[4, 0, 2, 1, 3])
        assert res.probs.shape == (4 ** 5,)
        assert abs(res.probs.sum() - 1.0) < 1e-12

    def test_order_changes_only_noise(self):
        g = random_gaussian(np.random.default_rng(5), 3)
        edges = [[0.0], [-0.5, 0.5], [1.0]]
        cfg = IntegrationConfig(abs_tol=1e-5)
        a = integrate_grid(g, edges, cfg)
        b = integrate_grid(g, edges, cfg, order=[2, 0, 1])
        assert a.converged and b.converged
        np.testing.assert_allclose(a.probs, b.probs, rtol=0, atol=2e-5)

    def test_first_coordinate_fastest(self):
        # independent coordinates: P(cell) is a product of 1-D masses
        g = GaussianDist(np.array([0.0, 1.0]), np.diag([1.0, 4.0]))
        res = integrate_grid(g, [[0.0], [0.0, 2.0]], IntegrationConfig(abs_tol=1e-10))
        p0 = np.array([0.5, 0.5])
        c1 = norm.cdf([0.0, 2.0], 1.0, 2.0)
        p1 = np.diff(np.concatenate([[0.0], c1, [1.0]]))
        np.testing.assert_allclose(res.probs, np.outer(p1, p0).ravel(), atol=1e-9)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            integrate_grid(GaussianDist(np.zeros(2), np.eye(2)), [[0.0], [0.0]], order=[0, 0])


class TestCellPmf:
    def test_standard_halves(self):
        g = GaussianDist(np.zeros(1), np.eye(1))
        cells = [HyperRect(np.array([-np.inf]), np.array([0.0])), HyperRect(np.array([0.0]), np.array([np.inf]))]
        np.testing.assert_array_equal(cell_pmf(g, cells).probs, [0.5, 0.5])

    def test_private_cells_at_mean(self):
        g = GaussianDist(np.array([6.94]), np.array([[1.7]]))
        cells = [HyperRect(np.array([-np.inf]), np.array([6.94])), HyperRect(np.array([6.94]), np.array([np.inf]))]
        np.testing.assert_allclose(cell_pmf(g, cells).probs, [0.5, 0.5], rtol=0, atol=1e-15)

    def test_accepts_limit_arrays(self):
        g = GaussianDist(np.zeros(1), np.eye(1))
        pmf = cell_pmf(g, (np.array([[-np.inf], [0.0]]), np.array([[0.0], [np.inf]])))
        assert pmf.size == 2

    def test_renormalize(self):
        np.testing.assert_allclose(renormalize([0.5, -1e-9, 0.5]), [0.5, 0.0, 0.5])
