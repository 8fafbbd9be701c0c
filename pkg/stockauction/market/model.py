"""
Market model: buyer types, type distributions, profile sampling, virtual
valuations and the regularity check every other module relies on.

A buyer's private type is a pair (marginal value per unit, demanded quantity).
Each period a random number of buyers arrives; a period's type profile is
padded with dummy (0, 0) entries up to the maximum number of arrivals.
"""

import dataclasses
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import optimize, stats

from .exceptions import DensityZeroError, MarketSpecError, NonMonotoneError

logger = logging.getLogger(__name__)

DENSITY_FLOOR = np.finfo(float).tiny
ROOT_TOLERANCE = 1e-12
DEFAULT_REGULARITY_GRID = 50


@dataclass(frozen=True)
class BuyerType:
    value: float
    quantity: float

    def __post_init__(self):
        if self.value < 0 or self.quantity < 0:
            raise MarketSpecError(f"Buyer type must be nonnegative, got {self}")

    @property
    def is_dummy(self):
        return self.value == 0 and self.quantity == 0


DUMMY = BuyerType(0.0, 0.0)


@dataclass(frozen=True, eq=False)
class TypeProfile:
    """One period's padded type profile.

    Slots at index >= arrivals hold the dummy type.
    """

    values: np.ndarray
    quantities: np.ndarray
    arrivals: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        quantities = np.array(self.quantities, dtype=float)
        if values.shape != quantities.shape or values.ndim != 1:
            raise MarketSpecError("Profile values and quantities must be equal-length vectors")
        if not 0 <= self.arrivals <= values.size:
            raise MarketSpecError(f"Arrivals {self.arrivals} outside 0..{values.size}")
        if np.any(values[self.arrivals:] != 0) or np.any(quantities[self.arrivals:] != 0):
            raise MarketSpecError("Slots beyond the arrivals must hold the dummy type")
        values.flags.writeable = False
        quantities.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "quantities", quantities)

    @classmethod
    def from_types(cls, types, size):
        types = list(types)
        if len(types) > size:
            raise MarketSpecError(f"{len(types)} buyers do not fit in a profile of size {size}")
        values = np.zeros(size)
        quantities = np.zeros(size)
        for i, buyer in enumerate(types):
            values[i] = buyer.value
            quantities[i] = buyer.quantity
        return cls(values, quantities, len(types))

    @property
    def size(self):
        return self.values.size

    @property
    def entries(self):
        return tuple(BuyerType(float(v), float(q)) for v, q in zip(self.values, self.quantities))

    def buyer(self, i):
        return BuyerType(float(self.values[i]), float(self.quantities[i]))

    def replace_buyer(self, i, buyer):
        """Return a copy with slot i holding `buyer`.

        Writing a non-dummy type into a dummy slot is only allowed for the
        first free slot, so the dummy tail stays contiguous.
        """
        if i >= self.arrivals and not buyer.is_dummy and i != self.arrivals:
            raise MarketSpecError(f"Slot {i} is not the next free slot ({self.arrivals})")
        values = self.values.copy()
        quantities = self.quantities.copy()
        values[i] = buyer.value
        quantities[i] = buyer.quantity
        arrivals = max(self.arrivals, i + 1) if not buyer.is_dummy else self.arrivals
        return TypeProfile(values, quantities, arrivals)

    def total_demand(self):
        return float(self.quantities.sum())


# Arrival families


@dataclass(frozen=True)
class TruncatedPoisson:
    """Poisson(rate) arrivals renormalized to {1, ..., max_arrivals}."""

    rate: float
    max_arrivals: int = 30
    family = "poisson"

    def __post_init__(self):
        if self.rate <= 0:
            raise MarketSpecError(f"Poisson rate must be positive, got {self.rate}")
        if self.max_arrivals < 1:
            raise MarketSpecError(f"max_arrivals must be at least 1, got {self.max_arrivals}")

    @cached_property
    def pmf(self):
        counts = np.arange(1, self.max_arrivals + 1)
        weights = stats.poisson.pmf(counts, self.rate)
        return weights / weights.sum()

    def mean(self):
        return float(np.arange(1, self.max_arrivals + 1) @ self.pmf)

    def variance(self):
        counts = np.arange(1, self.max_arrivals + 1)
        return float((counts**2) @ self.pmf - self.mean() ** 2)

    def sample(self, rng):
        return int(rng.choice(self.max_arrivals, p=self.pmf)) + 1


@dataclass(frozen=True)
class TabulatedArrivals:
    """Arrival pmf given explicitly for n = 1, ..., len(probabilities)."""

    probabilities: tuple
    family = "tabulated"

    def __post_init__(self):
        probabilities = np.asarray(self.probabilities, dtype=float)
        if probabilities.ndim != 1 or probabilities.size == 0:
            raise MarketSpecError("Arrival probabilities must be a non-empty vector")
        if np.any(probabilities < 0) or not np.isclose(probabilities.sum(), 1.0):
            raise MarketSpecError("Arrival probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probabilities", tuple(float(p) for p in probabilities))

    @property
    def max_arrivals(self):
        return len(self.probabilities)

    @cached_property
    def pmf(self):
        pmf = np.asarray(self.probabilities)
        return pmf / pmf.sum()

    def mean(self):
        return float(np.arange(1, self.max_arrivals + 1) @ self.pmf)

    def variance(self):
        counts = np.arange(1, self.max_arrivals + 1)
        return float((counts**2) @ self.pmf - self.mean() ** 2)

    def sample(self, rng):
        return int(rng.choice(self.max_arrivals, p=self.pmf)) + 1


# Quantity families


@dataclass(frozen=True)
class UniformQuantity:
    upper: float
    family = "uniform"

    def __post_init__(self):
        if self.upper <= 0:
            raise MarketSpecError(f"Uniform upper bound must be positive, got {self.upper}")

    @property
    def lower(self):
        return 0.0

    def cdf(self, q):
        return stats.uniform.cdf(q, loc=0.0, scale=self.upper)

    def sample(self, rng, size):
        return rng.uniform(0.0, self.upper, size)


@dataclass(frozen=True)
class PointQuantity:
    """Degenerate quantity distribution: every buyer demands `value` units."""

    value: float
    family = "point"

    def __post_init__(self):
        if self.value <= 0:
            raise MarketSpecError(f"Point quantity must be positive, got {self.value}")

    @property
    def lower(self):
        return self.value

    @property
    def upper(self):
        return self.value

    def cdf(self, q):
        return np.where(np.asarray(q) >= self.value, 1.0, 0.0)

    def sample(self, rng, size):
        return np.full(size, self.value)


@dataclass(frozen=True)
class TabulatedDistribution:
    """A distribution given by CDF values on a grid, linear in between.

    Densities come from central differences with a step of 1e-4 of the range,
    one-sided at the ends of the grid.
    """

    grid: tuple
    cdf_values: tuple
    family = "tabulated"

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        cdf = np.asarray(self.cdf_values, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or grid.shape != cdf.shape:
            raise MarketSpecError("Tabulated grid and CDF must be equal-length vectors of length >= 2")
        if np.any(np.diff(grid) <= 0):
            raise MarketSpecError("Tabulated grid must be strictly increasing")
        if np.any(np.diff(cdf) < 0) or cdf[0] < 0 or not np.isclose(cdf[-1], 1.0):
            raise MarketSpecError("Tabulated CDF must be monotone nondecreasing and end at 1")
        if grid[0] < 0:
            raise MarketSpecError("Tabulated support must be nonnegative")
        object.__setattr__(self, "grid", tuple(float(g) for g in grid))
        object.__setattr__(self, "cdf_values", tuple(float(c) for c in cdf))

    @property
    def lower(self):
        return self.grid[0]

    @property
    def upper(self):
        return self.grid[-1]

    @property
    def step(self):
        return 1e-4 * (self.grid[-1] - self.grid[0])

    def _cdf(self, x):
        return np.interp(x, self.grid, self.cdf_values, left=0.0, right=1.0)

    def cdf(self, x, q=None):
        return self._cdf(x)

    def pdf(self, x, q=None):
        x = np.asarray(x, dtype=float)
        h = self.step
        lo = np.clip(x - h, self.grid[0], self.grid[-1] - h)
        hi = np.clip(x + h, self.grid[0] + h, self.grid[-1])
        density = (self._cdf(hi) - self._cdf(lo)) / (hi - lo)
        return np.where((x < self.grid[0]) | (x > self.grid[-1]), 0.0, density)

    def hazard(self, v, q=None):
        density = self.pdf(v)
        if np.any(density < DENSITY_FLOOR):
            raise DensityZeroError(f"Tabulated density vanishes at v={v}")
        return (1.0 - self._cdf(v)) / density

    def quantile(self, p, q=None):
        return float(np.interp(p, self.cdf_values, self.grid))

    def draw(self, rng, size):
        return np.interp(rng.uniform(0.0, 1.0, size), self.cdf_values, self.grid)


class TabulatedQuantity(TabulatedDistribution):
    def sample(self, rng, size):
        return self.draw(rng, size)


class TabulatedValue(TabulatedDistribution):
    """Tabulated value distribution, the same for every quantity."""

    def sample(self, quantities, rng):
        return self.draw(rng, np.shape(quantities))


# Conditional value families


@dataclass(frozen=True)
class ExponentialValue:
    """Value given quantity q is Exponential with rate `scale * q`."""

    scale: float = 1.0
    family = "exponential"

    def __post_init__(self):
        if self.scale <= 0:
            raise MarketSpecError(f"Exponential scale must be positive, got {self.scale}")

    def _rate(self, q):
        rate = self.scale * np.asarray(q, dtype=float)
        if np.any(rate <= 0):
            raise DensityZeroError(f"Exponential value density is zero for quantity {q}")
        return rate

    def cdf(self, v, q):
        return stats.expon.cdf(v, scale=1.0 / self._rate(q))

    def pdf(self, v, q):
        return stats.expon.pdf(v, scale=1.0 / self._rate(q))

    def hazard(self, v, q):
        # (1 - F) / f of an exponential is the mean 1 / rate.
        return np.broadcast_to(1.0 / self._rate(q), np.broadcast(v, q).shape) * 1.0

    def quantile(self, p, q):
        return float(stats.expon.ppf(p, scale=1.0 / self._rate(q)))

    def sample(self, quantities, rng):
        quantities = np.asarray(quantities, dtype=float)
        means = np.divide(
            1.0, self.scale * quantities, out=np.zeros_like(quantities), where=quantities > 0
        )
        return rng.exponential(means)


@dataclass(frozen=True)
class RegularityReport:
    holds: bool
    worst_violation: float
    worst_value_step: float
    worst_quantity_step: float
    location: tuple | None = None
    axis: str | None = None


@dataclass(frozen=True)
class MarketSpec:
    """Immutable market definition.

    `value_cap` is the upper value bound used by the penalty. When not given it
    is the `value_cap_quantile` conditional quantile at the lowest quantity plus
    `value_cap_epsilon`, which keeps the penalty finite for unbounded values.
    """

    horizon: int
    stock: float
    discount: float
    arrivals: object
    quantities: object
    values: object
    value_cap: float | None = None
    value_cap_quantile: float = 0.9999
    value_cap_epsilon: float = 0.1
    regularity_tolerance: float = 1e-9

    def __post_init__(self):
        if self.horizon < 1:
            raise MarketSpecError(f"Horizon must be at least 1, got {self.horizon}")
        if self.stock <= 0:
            raise MarketSpecError(f"Stock must be positive, got {self.stock}")
        if not 0 <= self.discount <= 1:
            raise MarketSpecError(f"Discount must lie in [0, 1], got {self.discount}")
        if not 0 < self.value_cap_quantile < 1:
            raise MarketSpecError("value_cap_quantile must lie in (0, 1)")
        if self.value_cap is None:
            q_low = self.quantities.lower + self.value_cap_epsilon
            object.__setattr__(self, "value_cap", self.values.quantile(self.value_cap_quantile, q_low))
        if self.value_cap <= 0:
            raise MarketSpecError(f"Value cap must be positive, got {self.value_cap}")

    @property
    def max_buyers(self):
        return self.arrivals.max_arrivals

    @property
    def quantity_cap(self):
        return self.quantities.upper

    @cached_property
    def regularity(self):
        report = check_regularity(self, DEFAULT_REGULARITY_GRID, DEFAULT_REGULARITY_GRID)
        if not report.holds:
            logger.warning(
                f"Regularity fails: worst step {report.worst_violation:.3g} at {report.location}"
            )
        return report

    def with_scenario(self, horizon, stock):
        return dataclasses.replace(self, horizon=horizon, stock=stock)


def sample_profile(spec, rng):
    """Draw one period's type profile: arrivals, then q ~ f(q), then v ~ f(v|q)."""
    arrivals = spec.arrivals.sample(rng)
    quantities = np.asarray(spec.quantities.sample(rng, arrivals), dtype=float)
    values = np.asarray(spec.values.sample(quantities, rng), dtype=float)
    padded_values = np.zeros(spec.max_buyers)
    padded_quantities = np.zeros(spec.max_buyers)
    padded_values[:arrivals] = values
    padded_quantities[:arrivals] = quantities
    return TypeProfile(padded_values, padded_quantities, arrivals)


def sample_rivals(spec, rng, buyer):
    """Draw a profile in which `buyer` sits in slot 0 and n - 1 rivals follow.

    The arrival count is resampled each call; the buyer is always present.
    """
    arrivals = spec.arrivals.sample(rng)
    rivals = arrivals - 1
    quantities = np.asarray(spec.quantities.sample(rng, rivals), dtype=float)
    values = np.asarray(spec.values.sample(quantities, rng), dtype=float)
    padded_values = np.zeros(spec.max_buyers)
    padded_quantities = np.zeros(spec.max_buyers)
    padded_values[0] = buyer.value
    padded_quantities[0] = buyer.quantity
    padded_values[1:arrivals] = values
    padded_quantities[1:arrivals] = quantities
    return TypeProfile(padded_values, padded_quantities, arrivals)


def virtual_value(v, q, spec):
    """v - (1 - F(v|q)) / f(v|q); vectorized over v and q."""
    phi = np.asarray(v, dtype=float) - spec.values.hazard(v, q)
    return float(phi) if np.ndim(phi) == 0 else phi


def check_regularity(spec, grid_v, grid_q):
    """Scan the virtual value on a (v, q) grid for negative forward differences."""
    v_grid = np.linspace(0.0, spec.value_cap, max(grid_v, 1))
    q_grid = np.linspace(spec.quantities.lower, spec.quantities.upper, max(grid_q, 1))
    vv, qq = np.meshgrid(v_grid, q_grid, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        try:
            phi = virtual_value(vv, qq, spec)
        except DensityZeroError:
            phi = _virtual_value_masked(vv, qq, spec)

    value_steps = np.diff(phi, axis=0)
    quantity_steps = np.diff(phi, axis=1)
    worst_value = _nanmin(value_steps)
    worst_quantity = _nanmin(quantity_steps)
    worst = min(worst_value, worst_quantity)

    location = None
    axis = None
    if worst < 0:
        if worst_value <= worst_quantity:
            i, j = np.unravel_index(np.nanargmin(value_steps), value_steps.shape)
            axis = "value"
        else:
            i, j = np.unravel_index(np.nanargmin(quantity_steps), quantity_steps.shape)
            axis = "quantity"
        location = (float(v_grid[i]), float(q_grid[j]))

    holds = worst >= -spec.regularity_tolerance
    logger.debug(f"Regularity scan {grid_v}x{grid_q}: worst step {worst:.3g}")
    return RegularityReport(
        holds=bool(holds),
        worst_violation=float(worst),
        worst_value_step=float(worst_value),
        worst_quantity_step=float(worst_quantity),
        location=location,
        axis=axis,
    )


def _virtual_value_masked(vv, qq, spec):
    phi = np.full(vv.shape, np.nan)
    for index in np.ndindex(vv.shape):
        try:
            phi[index] = virtual_value(vv[index], qq[index], spec)
        except DensityZeroError:
            continue
    return phi


def _nanmin(steps):
    if steps.size == 0 or np.all(np.isnan(steps)):
        return 0.0
    return float(np.nanmin(steps))


def invert_virtual_value(target, q, spec):
    """Return v with virtual_value(v, q) == target, clamped to [0, value_cap]."""
    if not spec.regularity.holds:
        raise NonMonotoneError("Virtual value is not monotone; regularity check failed")
    if target <= virtual_value(0.0, q, spec):
        return 0.0
    upper = spec.value_cap
    if target >= virtual_value(upper, q, spec):
        return upper
    return optimize.bisect(
        lambda v: virtual_value(v, q, spec) - target, 0.0, upper, xtol=ROOT_TOLERANCE
    )
