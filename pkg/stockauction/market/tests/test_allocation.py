import numpy as np
from django.test import SimpleTestCase

from market.allocation import (
    allocate_x,
    boundary_index,
    dual_objective,
    lp_oracle,
    periodic_revenue,
    periodic_revenue_many,
    rank,
)
from market.exceptions import SizeCapError
from market.model import BuyerType, TypeProfile

from .factories import profile, default_spec


def random_profile(spec, rng, n):
    quantities = rng.uniform(0.05, 2.0, n)
    values = rng.exponential(1.0 / quantities)
    return TypeProfile.from_types([BuyerType(v, q) for v, q in zip(values, quantities)], n)


class RankTests(SimpleTestCase):
    def setUp(self):
        self.spec = default_spec()

    def test_orders_by_virtual_value(self):
        # Virtual values 1.0, 2.5, -0.5.
        ranked = rank(profile((2.0, 1.0), (3.0, 2.0), (0.5, 1.0)), self.spec)
        np.testing.assert_array_equal(ranked.order, [1, 0, 2])
        np.testing.assert_allclose(ranked.phis, [2.5, 1.0, -0.5])
        np.testing.assert_allclose(ranked.cum_demand, [2.0, 3.0, 4.0])

    def test_dummies_are_not_ranked(self):
        ranked = rank(profile((2.0, 1.0), size=4), self.spec)
        self.assertEqual(ranked.count, 1)
        self.assertEqual(ranked.size, 4)

    def test_ties_keep_slot_order(self):
        ranked = rank(profile((2.0, 1.0), (2.0, 1.0)), self.spec)
        np.testing.assert_array_equal(ranked.order, [0, 1])

    def test_boundary_index(self):
        ranked = rank(profile((2.0, 1.0), (3.0, 2.0)), self.spec)
        self.assertEqual(boundary_index(ranked, 1.5), 0)
        self.assertEqual(boundary_index(ranked, 2.0), 1)
        self.assertEqual(boundary_index(ranked, 10.0), 2)


class AllocateTests(SimpleTestCase):
    def setUp(self):
        self.spec = default_spec()
        self.ranked = rank(profile((2.0, 1.0), (3.0, 2.0), (0.5, 1.0)), self.spec)

    def test_fills_in_rank_order(self):
        allocation = allocate_x(self.ranked, 2.5)
        np.testing.assert_allclose(allocation.per_buyer, [0.5, 2.0, 0.0])
        self.assertAlmostEqual(allocation.sold, 2.5)

    def test_never_exceeds_demand(self):
        allocation = allocate_x(self.ranked, 100.0)
        np.testing.assert_allclose(allocation.per_buyer, [1.0, 2.0, 1.0])
        self.assertAlmostEqual(allocation.sold, 4.0)

    def test_zero_units(self):
        self.assertEqual(allocate_x(self.ranked, 0.0).sold, 0.0)
        self.assertEqual(periodic_revenue(self.ranked, 0.0), 0.0)

    def test_revenue_by_hand(self):
        self.assertAlmostEqual(periodic_revenue(self.ranked, 2.5), 2.5 * 2.0 + 1.0 * 0.5)
        self.assertAlmostEqual(periodic_revenue(self.ranked, 4.0), 5.0 + 1.0 - 0.5)

    def test_batched_revenue_matches_scalar(self):
        xs = np.linspace(0.0, 5.0, 11)
        expected = [periodic_revenue(self.ranked, x) for x in xs]
        np.testing.assert_allclose(periodic_revenue_many(self.ranked, xs), expected)

    def test_empty_profile(self):
        ranked = rank(profile(size=3), self.spec)
        self.assertEqual(periodic_revenue(ranked, 2.0), 0.0)
        np.testing.assert_array_equal(allocate_x(ranked, 2.0).per_buyer, np.zeros(3))


class GreedyOptimalityTests(SimpleTestCase):
    def test_greedy_matches_lp_oracle(self):
        spec = default_spec()
        rng = np.random.default_rng(11)
        for _ in range(300):
            p = random_profile(spec, rng, int(rng.integers(1, 7)))
            x = float(rng.uniform(0.0, p.total_demand()))
            self.assertAlmostEqual(periodic_revenue(rank(p, spec), x), lp_oracle(p, spec, x), delta=1e-9)

    def test_revenue_is_concave_in_units(self):
        spec = default_spec()
        rng = np.random.default_rng(12)
        for _ in range(200):
            ranked = rank(random_profile(spec, rng, 6), spec)
            xs = np.linspace(0.0, ranked.total_demand, 201)
            revenue = periodic_revenue_many(ranked, xs)
            self.assertTrue(np.all(np.diff(revenue, 2) <= 1e-9))

    def test_revenue_rises_up_to_positive_demand(self):
        spec = default_spec()
        rng = np.random.default_rng(15)
        for _ in range(200):
            ranked = rank(random_profile(spec, rng, 6), spec)
            positive = float(ranked.quantities[ranked.phis > 0].sum())
            revenue = periodic_revenue_many(ranked, np.linspace(0.0, positive, 101))
            self.assertTrue(np.all(np.diff(revenue) >= -1e-12))

    def test_allocation_grows_with_units(self):
        spec = default_spec()
        ranked = rank(random_profile(spec, np.random.default_rng(16), 6), spec)
        previous = allocate_x(ranked, 0.0).per_buyer
        for x in np.linspace(0.0, ranked.total_demand + 1.0, 60):
            current = allocate_x(ranked, x).per_buyer
            self.assertTrue(np.all(current >= previous))
            previous = current

    def test_joint_concavity_in_stock_and_units(self):
        spec = default_spec()
        rng = np.random.default_rng(17)
        for _ in range(200):
            ranked = rank(random_profile(spec, rng, 5), spec)
            positive = float(ranked.quantities[ranked.phis > 0].sum())

            def capped(stock, x):
                return periodic_revenue(ranked, min(x, stock))

            s1, s2, x1, x2 = rng.uniform(0.0, positive, 4)
            alpha = float(rng.uniform())
            mixed = capped(alpha * s1 + (1 - alpha) * s2, alpha * x1 + (1 - alpha) * x2)
            self.assertGreaterEqual(mixed, alpha * capped(s1, x1) + (1 - alpha) * capped(s2, x2) - 1e-9)

    def test_strong_duality(self):
        spec = default_spec()
        rng = np.random.default_rng(13)
        for _ in range(200):
            ranked = rank(random_profile(spec, rng, 5), spec)
            x = float(rng.uniform(0.0, ranked.total_demand))
            # The dual is piecewise linear with kinks at the virtual values.
            dual = min(dual_objective(ranked, x, mu) for mu in ranked.phis)
            self.assertAlmostEqual(dual, periodic_revenue(ranked, x), delta=1e-9)

    def test_oracle_size_cap(self):
        spec = default_spec()
        p = random_profile(spec, np.random.default_rng(14), 9)
        with self.assertRaises(SizeCapError):
            lp_oracle(p, spec, 1.0)
