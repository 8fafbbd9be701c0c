import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from market.allocation import periodic_revenue_many, rank
from market.exceptions import (
    DomainError,
    MarketSpecError,
    PolicyFileError,
    SingularRegressionError,
    SizeCapError,
)
from market.model import sample_profile
from market.value_approx import (
    ChebyshevBasis,
    ValueApprox,
    chebyshev_eval,
    chebyshev_nodes,
    chebyshev_slope,
    exact_dp_oracle,
    fit_coefficients,
    fit_mc,
    regression_operator,
    residual_scale,
)

from .factories import quadratic_approx, small_spec, default_spec


class ChebyshevTests(SimpleTestCase):
    def test_nodes_lie_inside_the_stock_range(self):
        nodes = chebyshev_nodes(5, 10.0).nodes
        self.assertEqual(nodes.size, 5)
        self.assertTrue(np.all((nodes > 0) & (nodes < 10.0)))
        # Symmetric around the midpoint.
        np.testing.assert_allclose(np.sort(nodes), np.sort(10.0 - nodes), atol=1e-12)

    def test_scale_rejects_stock_outside_domain(self):
        basis = ChebyshevBasis(4, 10.0)
        with self.assertRaises(DomainError):
            basis.scale(10.5)
        with self.assertRaises(DomainError):
            basis.scale(-0.5)
        self.assertEqual(float(basis.scale(10.0)), 1.0)

    def test_polynomial_is_fitted_exactly(self):
        basis = ChebyshevBasis(3, 10.0)
        nodes = chebyshev_nodes(10, 10.0).nodes
        coeffs = fit_coefficients(basis, nodes, 1.0 + 2.0 * nodes - 0.3 * nodes**2 + 0.01 * nodes**3)
        for s in (0.0, 2.5, 7.1, 10.0):
            self.assertAlmostEqual(chebyshev_eval(basis, coeffs, s), 1.0 + 2.0 * s - 0.3 * s**2 + 0.01 * s**3, places=6)

    def test_anchored_fit(self):
        basis = ChebyshevBasis(3, 10.0)
        nodes = chebyshev_nodes(10, 10.0).nodes
        cubic = 2.0 * nodes - 0.3 * nodes**2 + 0.01 * nodes**3
        coeffs = fit_coefficients(basis, nodes, cubic, anchor=0.0)
        self.assertAlmostEqual(chebyshev_eval(basis, coeffs, 2.5), 2.0 * 2.5 - 0.3 * 2.5**2 + 0.01 * 2.5**3, places=6)
        shifted = fit_coefficients(basis, nodes, cubic + 1.0, anchor=0.0)
        self.assertAlmostEqual(chebyshev_eval(basis, shifted, 0.0), 0.0, places=9)

    def test_slope_matches_finite_difference(self):
        basis = ChebyshevBasis(4, 10.0)
        coeffs = np.array([1.0, -0.5, 0.25, 0.1, -0.05])
        h = 1e-6
        for s in (1.0, 4.0, 8.5):
            numeric = (chebyshev_eval(basis, coeffs, s + h) - chebyshev_eval(basis, coeffs, s - h)) / (2 * h)
            self.assertAlmostEqual(chebyshev_slope(basis, coeffs, s), numeric, places=5)

    def test_repeated_nodes_are_singular(self):
        with self.assertRaises(SingularRegressionError):
            regression_operator(ChebyshevBasis(2, 10.0), np.array([5.0, 5.0, 5.0]))


class ValueApproxTests(SimpleTestCase):
    def setUp(self):
        self.spec = default_spec(horizon=3)
        self.approx = quadratic_approx(self.spec, 4.0, 0.2)

    def test_value_and_slope(self):
        self.assertAlmostEqual(self.approx.value(2, 5.0), 4.0 * 5.0 - 0.2 * 25.0, places=6)
        self.assertAlmostEqual(self.approx.slope(2, 5.0), 4.0 - 0.4 * 5.0, places=6)

    def test_zero_beyond_horizon(self):
        self.assertEqual(self.approx.value(4, 5.0), 0.0)
        self.assertEqual(self.approx.slope(4, 5.0), 0.0)
        np.testing.assert_array_equal(self.approx.value(4, np.array([1.0, 2.0])), [0.0, 0.0])

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "nested" / "mc.json"
            self.approx.save(path)
            loaded = ValueApprox.load(path)
        np.testing.assert_allclose(loaded.coeffs, self.approx.coeffs)
        self.assertEqual(loaded.basis, self.approx.basis)
        self.assertEqual(loaded.horizon, 3)

    def test_unknown_version_is_rejected(self):
        data = self.approx.to_dict()
        data["version"] = 99
        with self.assertRaises(PolicyFileError):
            ValueApprox.from_dict(data)

    def test_malformed_coefficients_are_rejected(self):
        data = self.approx.to_dict()
        data["coeffs"] = [[1.0, 2.0]]
        with self.assertRaises(PolicyFileError):
            ValueApprox.from_dict(data)

    def test_unreadable_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.json"
            path.write_text("{not json")
            with self.assertRaises(PolicyFileError):
                ValueApprox.load(path)
            path.write_text(json.dumps({"version": 1, "kind": "ddpg"}))
            with self.assertRaises(PolicyFileError):
                ValueApprox.load(path)


class FitMcTests(SimpleTestCase):
    def test_needs_enough_nodes(self):
        with self.assertRaises(MarketSpecError):
            fit_mc(default_spec(), 3, 4, 10, np.random.default_rng(0))

    def test_last_period_node_values_are_sample_means(self):
        spec = small_spec(horizon=1, stock=2.0)
        rng = np.random.default_rng(21)
        profiles = [[sample_profile(spec, rng) for _ in range(40)]]
        approx = fit_mc(spec, 5, 2, 40, None, profiles=profiles)

        nodes = chebyshev_nodes(5, spec.stock).nodes
        expected = np.zeros(5)
        for p in profiles[0]:
            ranked = rank(p, spec)
            positive = float(ranked.quantities[ranked.phis > 0].sum())
            expected += periodic_revenue_many(ranked, np.minimum(nodes, positive))
        np.testing.assert_allclose(approx.metadata["node_values"][0], expected / 40, atol=1e-9)
        self.assertEqual(approx.nodes, 5)
        self.assertEqual(approx.episodes, 40)

    def test_same_seed_same_fit(self):
        spec = small_spec(horizon=2)
        first = fit_mc(spec, 5, 2, 20, np.random.default_rng(3))
        second = fit_mc(spec, 5, 2, 20, np.random.default_rng(3))
        np.testing.assert_array_equal(first.coeffs, second.coeffs)

    def test_matches_exact_recursion_on_default_market(self):
        spec = default_spec(horizon=2)
        rng = np.random.default_rng(22)
        episodes = 400
        profiles = [[sample_profile(spec, rng) for _ in range(episodes)] for _ in range(spec.horizon)]
        approx = fit_mc(spec, 20, 4, episodes, None, profiles=profiles)
        exact = exact_dp_oracle(spec, 101, 101, profiles)

        for period in (1, 2):
            target = exact.values[period - 1]
            gap = np.max(np.abs(approx.value(period, exact.stocks) - target))
            self.assertLessEqual(gap, 0.05 * (target.max() - target.min()))

    def test_pinned_to_zero_without_stock(self):
        approx = fit_mc(default_spec(horizon=2), 12, 4, 50, np.random.default_rng(24))
        for period in (1, 2):
            self.assertAlmostEqual(approx.value(period, 0.0), 0.0, places=9)

    def test_interpolates_with_as_many_nodes_as_basis_functions(self):
        approx = fit_mc(default_spec(horizon=2), 5, 4, 30, np.random.default_rng(25))
        self.assertLessEqual(max(approx.metadata["residuals"]), 1e-8)

    def test_fitted_value_is_monotone_and_concave_within_residual(self):
        spec = default_spec(horizon=2)
        approx = fit_mc(spec, 20, 4, 400, np.random.default_rng(26))
        grid = np.linspace(0.0, spec.stock, 401)
        for period in (1, 2):
            residual = residual_scale(approx, period)
            values = approx.value(period, grid)
            # A monotone concave target seen through a band of +-residual.
            self.assertLessEqual(np.max(np.maximum.accumulate(values) - values), 2 * residual + 1e-9)
            self.assertLessEqual(np.max(np.diff(values, 2)), 4 * residual + 1e-9)


class ExactOracleTests(SimpleTestCase):
    def test_size_caps(self):
        spec = small_spec(horizon=6)
        profiles = [[sample_profile(spec, np.random.default_rng(0))]] * 6
        with self.assertRaises(SizeCapError):
            exact_dp_oracle(spec, 11, 11, profiles)
        with self.assertRaises(SizeCapError):
            exact_dp_oracle(small_spec(), 500, 11, profiles)

    def test_values_are_nondecreasing_in_stock(self):
        spec = small_spec(horizon=2)
        rng = np.random.default_rng(23)
        profiles = [[sample_profile(spec, rng) for _ in range(50)] for _ in range(2)]
        exact = exact_dp_oracle(spec, 41, 41, profiles)
        self.assertTrue(np.all(np.diff(exact.values[0]) >= -1e-9))
        np.testing.assert_array_equal(exact.values[2], np.zeros(41))

    def test_rows_are_monotone_and_concave_in_stock(self):
        for spec in (small_spec(horizon=3), default_spec(horizon=2)):
            rng = np.random.default_rng(27)
            profiles = [[sample_profile(spec, rng) for _ in range(50)] for _ in range(spec.horizon)]
            exact = exact_dp_oracle(spec, 41, 41, profiles)
            for row in exact.values:
                self.assertTrue(np.all(np.diff(row) >= -1e-9))
                self.assertTrue(np.all(np.diff(row, 2) <= 1e-9))
