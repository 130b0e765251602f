import itertools

import numpy as np
import pytest

from otflow import (
    CostFunction,
    Coupling,
    Marginal,
    RbfKernel,
    energy_estimate,
    exact_assignment,
    gaussian_barycenter_1d,
    gaussian_map_1d,
    interpolate,
    marginal_w2_1d,
    silverman_bandwidth,
    sorted_coupling_1d,
)
from otflow.diagnostics import mixture_quantiles_1d


def brute_force_cost(xs, ys, cost=CostFunction()):
    """Exhaustive minimum over all pairings; oracle for N <= 7."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float).T).T
    ys = np.atleast_2d(np.asarray(ys, dtype=float).T).T
    if xs.ndim == 1:
        xs = xs[:, None]
    if ys.ndim == 1:
        ys = ys[:, None]
    n = xs.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        sq = np.sum((xs - ys[list(perm)]) ** 2, axis=1)
        c = np.mean(sq if cost.kind == "quadratic" else sq ** (cost.exponent / 2))
        best = min(best, c)
    return best


class TestSortedCoupling:
    def test_monotone_matching(self):
        coupling, _ = sorted_coupling_1d([1.0, 3.0, 2.0], [10.0, 30.0, 20.0])
        np.testing.assert_array_equal(coupling.x[:, 0], [1, 2, 3])
        np.testing.assert_array_equal(coupling.y[:, 0], [10, 20, 30])

    def test_identity_cost(self):
        xs = np.random.default_rng(0).normal(size=10)
        _, cost = sorted_coupling_1d(xs, xs)
        assert cost == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            n = rng.integers(1, 8)
            xs = rng.normal(size=n)
            ys = rng.normal(size=n)
            _, cost = sorted_coupling_1d(xs, ys)
            assert cost == pytest.approx(brute_force_cost(xs, ys), rel=1e-12)

    def test_matches_brute_force_power_cost(self):
        rng = np.random.default_rng(43)
        c = CostFunction("power", 3.0)
        for _ in range(10):
            n = rng.integers(2, 7)
            xs = rng.normal(size=n)
            ys = rng.normal(size=n)
            _, cost = sorted_coupling_1d(xs, ys, c)
            assert cost == pytest.approx(brute_force_cost(xs, ys, c), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            sorted_coupling_1d([1.0], [1.0, 2.0])


class TestExactAssignment:
    def test_identity(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(12, 3))
        coupling, cost = exact_assignment(pts, pts)
        assert cost == 0.0
        np.testing.assert_array_equal(coupling.x, coupling.y)

    def test_matches_brute_force_2d(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = rng.integers(1, 8)
            xs = rng.normal(size=(n, 2))
            ys = rng.normal(size=(n, 2))
            _, cost = exact_assignment(xs, ys)
            assert cost == pytest.approx(brute_force_cost(xs, ys), rel=1e-12)

    def test_equals_sorted_oracle_1d(self):
        rng = np.random.default_rng(8)
        xs = rng.normal(size=128)
        ys = rng.normal(loc=2.0, size=128)
        _, a = exact_assignment(xs, ys)
        _, s = sorted_coupling_1d(xs, ys)
        assert abs(a - s) <= 1e-9

    def test_never_beaten_by_heuristics(self):
        rng = np.random.default_rng(9)
        xs = rng.normal(size=(20, 2))
        ys = rng.normal(size=(20, 2))
        _, optimal = exact_assignment(xs, ys)
        for _ in range(30):
            perm = rng.permutation(20)
            heuristic = float(np.mean(np.sum((xs - ys[perm]) ** 2, axis=1)))
            assert optimal <= heuristic + 1e-12

    def test_cap_enforced(self):
        pts = np.zeros((600, 2))
        with pytest.raises(ValueError):
            exact_assignment(pts, pts, cap=512)


class TestGaussianClosedForms:
    def test_map_shift(self):
        slope, intercept = gaussian_map_1d((-4.0, 1.0), (6.0, 1.0))
        assert slope == 1.0
        assert intercept == 10.0

    def test_map_identity(self):
        assert gaussian_map_1d((2.0, 3.0), (2.0, 3.0)) == (1.0, 0.0)

    def test_map_scaling(self):
        assert gaussian_map_1d((0.0, 1.0), (0.0, 2.0)) == (2.0, 0.0)

    def test_map_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            gaussian_map_1d((0.0, 0.0), (0.0, 1.0))

    def test_barycenter_values(self):
        assert gaussian_barycenter_1d([(-10, 1), (10, 1)], [0.75, 0.25]) == (-5.0, 1.0)
        assert gaussian_barycenter_1d([(3.0, 2.0)], [1.0]) == (3.0, 2.0)
        _, std = gaussian_barycenter_1d([(0, 1), (0, 3)], [0.5, 0.5])
        assert std == 2.0


class TestMarginalW2:
    def test_zero_at_midpoint_quantiles(self):
        m = Marginal.gaussian([0.0], 1.0)
        probs = (np.arange(50) + 0.5) / 50
        sample = mixture_quantiles_1d(m, probs)
        assert marginal_w2_1d(sample, m) <= 1e-9

    def test_shift_is_w2(self):
        m = Marginal.gaussian([0.0], 1.0)
        probs = (np.arange(64) + 0.5) / 64
        sample = mixture_quantiles_1d(m, probs) + 0.7
        assert marginal_w2_1d(sample, m) == pytest.approx(0.7, abs=1e-8)

    def test_nonzero_off_quantiles(self):
        m = Marginal.gaussian([0.0], 1.0)
        probs = (np.arange(32) + 0.5) / 32
        sample = mixture_quantiles_1d(m, probs)
        sample[3] += 0.5
        assert marginal_w2_1d(sample, m) > 1e-3

    def test_monte_carlo_sample(self):
        # calibrated seed: the W2 of 1000 iid draws fluctuates around 0.08
        m = Marginal.mixture([0.5, 0.5], [[-2.0], [2.0]], [1.0, 1.0])
        sample = m.sample(1000, seed=9)
        assert marginal_w2_1d(sample, m) <= 0.1

    def test_quantile_bisection_accuracy(self):
        from scipy.stats import norm

        m = Marginal.gaussian([1.5], 4.0)
        probs = np.array([0.01, 0.3, 0.5, 0.9, 0.999])
        expected = norm.ppf(probs, loc=1.5, scale=2.0)
        np.testing.assert_allclose(mixture_quantiles_1d(m, probs), expected, atol=1e-8)

    def test_quadrature_cap_subsamples(self):
        m = Marginal.gaussian([0.0], 1.0)
        sample = m.sample(5000, seed=3)
        full = marginal_w2_1d(sample, m)
        capped = marginal_w2_1d(sample, m, quadrature_n=500)
        assert capped == pytest.approx(full, abs=0.05)


class TestEnergyEstimate:
    def _fixture(self):
        mu = Marginal.gaussian([-4.0], 1.0)
        nu = Marginal.gaussian([6.0], 1.0)
        x = mu.sample(800, seed=1)
        y = nu.sample(800, seed=2)
        kx = RbfKernel(silverman_bandwidth(x))
        ky = RbfKernel(silverman_bandwidth(y))
        return Coupling(x, y), mu, nu, kx, ky

    def test_zero_relaxation_is_mean_cost(self):
        coupling, mu, nu, kx, ky = self._fixture()
        assert energy_estimate(coupling, mu, nu, 0.0, kx, ky) == coupling.mean_cost()

    def test_product_coupling_reference(self):
        # independent draws: E|x-y|^2 = (m1-m2)^2 + s1^2 + s2^2 = 102,
        # and both KDE KL estimates should be near zero
        coupling, mu, nu, kx, ky = self._fixture()
        cost_part = coupling.mean_cost()
        assert cost_part == pytest.approx(102.0, rel=0.05)
        kl_part = energy_estimate(coupling, mu, nu, 1.0, kx, ky) - cost_part
        assert abs(kl_part) < 0.3

    def test_determinism(self):
        coupling, mu, nu, kx, ky = self._fixture()
        a = energy_estimate(coupling, mu, nu, 60.0, kx, ky)
        b = energy_estimate(coupling, mu, nu, 60.0, kx, ky)
        assert a == b


class TestInterpolate:
    def test_endpoints(self):
        rng = np.random.default_rng(3)
        c = Coupling(rng.normal(size=(20, 2)), rng.normal(size=(20, 2)))
        np.testing.assert_array_equal(interpolate(c, 0.0), c.x)
        np.testing.assert_array_equal(interpolate(c, 1.0), c.y)

    def test_midpoint(self):
        c = Coupling(np.array([[0.0]]), np.array([[10.0]]))
        np.testing.assert_array_equal(interpolate(c, 0.5), [[5.0]])

    def test_rejects_out_of_range(self):
        c = Coupling(np.zeros((2, 1)), np.ones((2, 1)))
        with pytest.raises(ValueError):
            interpolate(c, 1.5)

    def test_mean_moves_linearly_on_exact_map(self):
        m1, s1 = -4.0, 1.0
        m2, s2 = 6.0, 1.0
        slope, intercept = gaussian_map_1d((m1, s1), (m2, s2))
        x = Marginal.gaussian([m1], s1**2).sample(1000, seed=11)
        c = Coupling(x, slope * x + intercept)
        for t in (0.25, 0.5, 0.75):
            expected = (1 - t) * m1 + t * m2
            assert interpolate(c, t).mean() == pytest.approx(expected, abs=0.05)
