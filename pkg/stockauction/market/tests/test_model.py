import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from market.exceptions import DensityZeroError, MarketSpecError, NonMonotoneError
from market.model import (
    DUMMY,
    BuyerType,
    ExponentialValue,
    MarketSpec,
    PointQuantity,
    TabulatedArrivals,
    TabulatedValue,
    TruncatedPoisson,
    TypeProfile,
    UniformQuantity,
    check_regularity,
    invert_virtual_value,
    sample_profile,
    sample_rivals,
    virtual_value,
)

from .factories import profile, default_spec


def bimodal_spec():
    # Density 0.45, 0.05, 0.05, 0.45 on unit cells: the virtual value falls in the middle.
    return MarketSpec(
        horizon=1,
        stock=1.0,
        discount=1.0,
        arrivals=TabulatedArrivals((1.0,)),
        quantities=UniformQuantity(1.0),
        values=TabulatedValue((0.0, 1.0, 2.0, 3.0, 4.0), (0.0, 0.45, 0.5, 0.55, 1.0)),
    )


class VirtualValueTests(SimpleTestCase):
    def setUp(self):
        self.spec = default_spec()

    def test_exponential_virtual_value(self):
        self.assertAlmostEqual(virtual_value(2.0, 1.0, self.spec), 1.0)
        self.assertAlmostEqual(virtual_value(0.5, 2.0, self.spec), 0.0)

    def test_vectorized(self):
        phi = virtual_value(np.array([1.0, 2.0]), np.array([0.5, 4.0]), self.spec)
        np.testing.assert_allclose(phi, [-1.0, 1.75])

    def test_zero_quantity_has_no_density(self):
        with self.assertRaises(DensityZeroError):
            virtual_value(1.0, 0.0, self.spec)

    def test_tabulated_matches_exponential_hazard(self):
        grid = np.linspace(0.0, 30.0, 3001)
        spec = MarketSpec(
            horizon=1,
            stock=1.0,
            discount=1.0,
            arrivals=TabulatedArrivals((1.0,)),
            quantities=PointQuantity(1.0),
            values=TabulatedValue(grid, np.append(stats.expon.cdf(grid[:-1]), 1.0)),
        )
        self.assertAlmostEqual(virtual_value(2.0, 1.0, spec), 1.0, places=3)

    def test_flat_tabulated_density_raises(self):
        values = TabulatedValue((0.0, 1.0, 2.0, 3.0), (0.0, 0.5, 0.5, 1.0))
        with self.assertRaises(DensityZeroError):
            values.hazard(1.5)

    def test_tabulated_density_holds_at_the_grid_ends(self):
        values = TabulatedValue((0.0, 2.0), (0.0, 1.0))
        np.testing.assert_allclose(values.pdf(np.array([0.0, 1.0, 2.0])), [0.5, 0.5, 0.5])
        self.assertAlmostEqual(float(values.hazard(0.0)), 2.0)
        self.assertAlmostEqual(float(values.hazard(2.0)), 0.0)
        self.assertEqual(float(values.pdf(2.5)), 0.0)


class LowQuantityDip:
    """Virtual value -v below q = 0.05 and v - 1 above."""

    family = "custom"

    def hazard(self, v, q):
        v, q = np.broadcast_arrays(np.asarray(v, dtype=float), np.asarray(q, dtype=float))
        return np.where(q < 0.05, 2.0 * v, 1.0)


class RegularityTests(SimpleTestCase):
    def test_exponential_family_is_regular(self):
        report = check_regularity(default_spec(), 50, 50)
        self.assertTrue(report.holds)
        self.assertIsNone(report.location)

    def test_bimodal_values_are_not_regular(self):
        spec = bimodal_spec()
        report = spec.regularity
        self.assertFalse(report.holds)
        self.assertEqual(report.axis, "value")
        self.assertLess(report.worst_violation, 0)

    def test_scan_starts_at_the_lowest_quantity(self):
        spec = MarketSpec(
            horizon=1,
            stock=1.0,
            discount=1.0,
            arrivals=TabulatedArrivals((1.0,)),
            quantities=UniformQuantity(2.0),
            values=LowQuantityDip(),
            value_cap=4.0,
        )
        report = check_regularity(spec, 50, 50)
        self.assertFalse(report.holds)
        self.assertLess(report.location[1], spec.value_cap_epsilon)

    def test_zero_quantity_column_is_skipped(self):
        # Exponential values have no density at q = 0; the scan masks that column.
        spec = default_spec()
        self.assertEqual(spec.quantities.lower, 0.0)
        self.assertTrue(check_regularity(spec, 20, 20).holds)

    def test_inversion_requires_regularity(self):
        with self.assertRaises(NonMonotoneError):
            invert_virtual_value(0.5, 0.5, bimodal_spec())


class InversionTests(SimpleTestCase):
    def setUp(self):
        self.spec = default_spec()

    def test_inverts_exponential(self):
        self.assertAlmostEqual(invert_virtual_value(1.0, 1.0, self.spec), 2.0, places=9)

    def test_below_range_clamps_to_zero(self):
        self.assertEqual(invert_virtual_value(-5.0, 1.0, self.spec), 0.0)

    def test_above_range_clamps_to_cap(self):
        self.assertEqual(invert_virtual_value(1e9, 1.0, self.spec), self.spec.value_cap)

    def test_round_trip_on_grid(self):
        for v in (0.5, 1.7, 3.2):
            for q in (0.3, 1.0, 1.9):
                phi = virtual_value(v, q, self.spec)
                self.assertAlmostEqual(invert_virtual_value(phi, q, self.spec), v, places=8)


class MarketSpecTests(SimpleTestCase):
    def test_value_cap_defaults_to_high_quantile(self):
        spec = default_spec()
        # 0.9999 quantile of Exponential(rate 0.1).
        self.assertAlmostEqual(spec.value_cap, -np.log(1e-4) / 0.1, places=6)

    def test_explicit_value_cap(self):
        self.assertEqual(default_spec(value_cap=4.0).value_cap, 4.0)

    def test_rejects_bad_parameters(self):
        with self.assertRaises(MarketSpecError):
            default_spec(horizon=0)
        with self.assertRaises(MarketSpecError):
            default_spec(stock=-1.0)
        with self.assertRaises(MarketSpecError):
            default_spec(discount=1.5)
        with self.assertRaises(MarketSpecError):
            TruncatedPoisson(0.0)
        with self.assertRaises(MarketSpecError):
            TabulatedArrivals((0.5, 0.2))

    def test_with_scenario(self):
        spec = default_spec().with_scenario(30, 30.0)
        self.assertEqual((spec.horizon, spec.stock), (30, 30.0))
        self.assertEqual(spec.max_buyers, 30)


class ProfileTests(SimpleTestCase):
    def test_dummy_tail_is_validated(self):
        with self.assertRaises(MarketSpecError):
            TypeProfile(np.array([1.0, 2.0]), np.array([1.0, 1.0]), 1)

    def test_profile_is_read_only(self):
        p = profile((1.0, 1.0), size=3)
        with self.assertRaises(ValueError):
            p.values[0] = 5.0

    def test_replace_buyer(self):
        p = profile((1.0, 1.0), size=3)
        grown = p.replace_buyer(1, BuyerType(2.0, 0.5))
        self.assertEqual(grown.arrivals, 2)
        self.assertEqual(grown.buyer(1), BuyerType(2.0, 0.5))
        self.assertEqual(p.arrivals, 1)
        emptied = grown.replace_buyer(0, DUMMY)
        self.assertEqual(emptied.arrivals, 2)
        self.assertEqual(emptied.total_demand(), 0.5)

    def test_replace_buyer_keeps_tail_contiguous(self):
        with self.assertRaises(MarketSpecError):
            profile((1.0, 1.0), size=3).replace_buyer(2, BuyerType(1.0, 1.0))


class SamplingTests(SimpleTestCase):
    def test_point_quantity_profile(self):
        spec = MarketSpec(
            horizon=1,
            stock=1.0,
            discount=1.0,
            arrivals=TabulatedArrivals((0.0, 0.0, 1.0)),
            quantities=PointQuantity(1.0),
            values=ExponentialValue(1.0),
        )
        p = sample_profile(spec, np.random.default_rng(3))
        self.assertEqual(p.arrivals, 3)
        np.testing.assert_array_equal(p.quantities, [1.0, 1.0, 1.0])
        self.assertTrue(np.all(p.values > 0))

    def test_padded_to_max_arrivals(self):
        spec = default_spec()
        p = sample_profile(spec, np.random.default_rng(4))
        self.assertEqual(p.size, 30)
        self.assertTrue(all(entry.is_dummy for entry in p.entries[p.arrivals:]))

    def test_truncated_poisson_mean(self):
        arrivals = TruncatedPoisson(10.0, 30)
        rng = np.random.default_rng(5)
        draws = np.array([arrivals.sample(rng) for _ in range(20_000)])
        self.assertTrue(draws.min() >= 1 and draws.max() <= 30)
        stderr = np.sqrt(arrivals.variance() / draws.size)
        self.assertLess(abs(draws.mean() - arrivals.mean()), 4 * stderr)

    def test_quantities_follow_uniform(self):
        spec = default_spec()
        rng = np.random.default_rng(6)
        quantities = []
        for _ in range(300):
            p = sample_profile(spec, rng)
            quantities.extend(p.quantities[: p.arrivals])
        result = stats.kstest(quantities, "uniform", args=(0.0, 2.0))
        self.assertGreater(result.pvalue, 1e-3)

    def test_sample_rivals_places_buyer_first(self):
        spec = default_spec()
        buyer = BuyerType(3.0, 1.5)
        p = sample_rivals(spec, np.random.default_rng(7), buyer)
        self.assertEqual(p.buyer(0), buyer)
        self.assertGreaterEqual(p.arrivals, 1)

    def test_rivals_do_not_depend_on_report(self):
        spec = default_spec()
        first = sample_rivals(spec, np.random.default_rng(8), BuyerType(1.0, 1.0))
        second = sample_rivals(spec, np.random.default_rng(8), BuyerType(5.0, 0.2))
        np.testing.assert_array_equal(first.values[1:], second.values[1:])
        np.testing.assert_array_equal(first.quantities[1:], second.quantities[1:])
