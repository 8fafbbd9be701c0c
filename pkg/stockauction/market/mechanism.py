"""
Per-period mechanism: threshold allocation, payments and the overbid penalty.

A buyer's payment is value times allocation minus the area under the
allocation curve as the reported value sweeps from 0 up to the truth, with the
reported quantity held fixed. The allocation curve mixes flat stretches,
continuous rises and jumps, so every quadrature interval where it changes is
refined adaptively until the jumps are isolated.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .allocation import allocate_x, periodic_revenue, rank
from .exceptions import MarketSpecError
from .model import DUMMY, BuyerType, invert_virtual_value, sample_profile, sample_rivals, virtual_value
from .sell_policy import continuation_slope, sell_quantity, threshold_quantities

logger = logging.getLogger(__name__)

QUAD_POINTS = 64
ADAPTIVE_DEPTH = 50
AREA_TOLERANCE = 1e-12
FLAT_TOLERANCE = 1e-12
ALLOCATION_MATCH_TOLERANCE = 1e-9
PENALTY_SAMPLES = 10_000
PENALTY_CAP_FACTOR = 1e6
MIN_INTERIM_SAMPLES = 100


@dataclass(frozen=True, eq=False)
class MechanismOutcome:
    allocations: np.ndarray
    payments: np.ndarray
    penalties: np.ndarray
    sold: float
    next_stock: float

    @property
    def revenue(self):
        return float(self.payments.sum() + self.penalties.sum())


@dataclass(frozen=True)
class InterimEstimate:
    mean: float
    stderr: float
    samples: int

    @classmethod
    def from_samples(cls, samples):
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        stderr = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(mean=float(samples.mean()), stderr=stderr, samples=n)


def decide(profile, stock, spec, approx, period):
    """Rank, pick the sell quantity and allocate it."""
    ranked = rank(profile, spec)
    x = sell_quantity(ranked, stock, approx, period, spec.discount) if stock > 0 else 0.0
    return ranked, x, allocate_x(ranked, x)


def counterfactual_allocations(i, profile, stock, spec, approx, period, reported_values):
    """Buyer i's allocation for each value in `reported_values`, everything else fixed.

    Buyer i is inserted among the others' ranked virtual values once per
    reported value, and the threshold search runs over all rows at once.
    """
    reported_values = np.atleast_1d(np.asarray(reported_values, dtype=float))
    q_i = float(profile.quantities[i])
    if q_i <= 0 or stock <= 0:
        return np.zeros(reported_values.shape)

    slots = np.flatnonzero(profile.quantities > 0)
    slots = slots[slots != i]
    other_q = profile.quantities[slots]
    other_phi = np.atleast_1d(virtual_value(profile.values[slots], other_q, spec))
    order = np.argsort(-other_phi, kind="stable")
    other_phi, other_q, slots = other_phi[order], other_q[order], slots[order]

    psi = np.atleast_1d(virtual_value(reported_values, np.full(reported_values.shape, q_i), spec))
    # Ties go to the lower slot, matching the stable rank.
    position = (other_phi[None, :] > psi[:, None]).sum(axis=1) + (
        (other_phi[None, :] == psi[:, None]) & (slots[None, :] < i)
    ).sum(axis=1)

    width = slots.size + 1
    columns = np.arange(width)[None, :]
    source = columns - (columns > position[:, None])
    source = np.clip(source, 0, max(slots.size - 1, 0))
    own = columns == position[:, None]
    if slots.size:
        phis = np.where(own, psi[:, None], other_phi[source])
        quantities = np.where(own, q_i, other_q[source])
    else:
        phis = psi[:, None].copy()
        quantities = np.full((psi.size, 1), q_i)
    highs = np.cumsum(quantities, axis=1)
    lows = highs - quantities

    stocks = np.full(psi.size, float(stock))
    x = threshold_quantities(lows, highs, phis, stocks, continuation_slope(approx, period, spec.discount))
    before = lows[np.arange(psi.size), position]
    return np.clip(x - before, 0.0, q_i)


def _changed_area(curve, lo, hi, f_lo, f_hi, tolerance):
    """Area under the curve over intervals whose end values differ.

    Each interval gets Simpson's rule on 3 and on 5 points and is halved until
    the two agree, so jumps end up isolated in tiny pieces while smooth rises
    settle after a few levels. Every level is one batched curve call.
    """
    area = 0.0
    for _ in range(ADAPTIVE_DEPTH):
        if lo.size == 0:
            return area
        x = np.linspace(lo, hi, 5, axis=1)
        f = np.empty(x.shape)
        f[:, 0], f[:, -1] = f_lo, f_hi
        f[:, 1:4] = curve(x[:, 1:4].ravel()).reshape(-1, 3)
        coarse = integrate.simpson(f[:, ::2], x=x[:, ::2], axis=1)
        fine = integrate.simpson(f, x=x, axis=1)
        done = np.abs(fine - coarse) <= 15 * tolerance
        area += float(fine[done].sum())

        x, f = x[~done], f[~done]
        lo, hi = np.concatenate([x[:, 0], x[:, 2]]), np.concatenate([x[:, 2], x[:, 4]])
        f_lo, f_hi = np.concatenate([f[:, 0], f[:, 2]]), np.concatenate([f[:, 2], f[:, 4]])
    return area + float(np.sum(0.5 * (f_lo + f_hi) * (hi - lo)))


def payment_integral(i, profile, stock, spec, approx, period, quad_points=QUAD_POINTS, allocation=None):
    v_i = float(profile.values[i])
    q_i = float(profile.quantities[i])
    if q_i <= 0 or v_i <= 0 or stock <= 0:
        return 0.0
    if allocation is None:
        _, _, period_allocation = decide(profile, stock, spec, approx, period)
        allocation = float(period_allocation.per_buyer[i])
    if allocation <= 0:
        return 0.0

    def curve(taus):
        return counterfactual_allocations(i, profile, stock, spec, approx, period, taus)

    grid = np.linspace(0.0, v_i, quad_points + 1)
    levels = curve(grid)
    # The curve is nondecreasing, so equal ends mean it is flat in between.
    changed = np.abs(np.diff(levels)) > FLAT_TOLERANCE
    area = float(np.sum(levels[:-1][~changed] * np.diff(grid)[~changed]))
    if changed.any():
        area += _changed_area(
            curve,
            grid[:-1][changed],
            grid[1:][changed],
            levels[:-1][changed],
            levels[1:][changed],
            AREA_TOLERANCE * v_i * q_i,
        )

    payment = v_i * allocation - area
    return float(np.clip(payment, 0.0, v_i * allocation))


def payment_counterfactual(i, profile, stock, spec, approx, period):
    """Externality payment: displaced units priced at the inverse virtual value.

    The others are reallocated the same sell quantity without buyer i; each
    rival's gain is priced at the value that would give buyer i's quantity the
    rival's virtual value.
    """
    ranked, x, allocation = decide(profile, stock, spec, approx, period)
    a_i = float(allocation.per_buyer[i])
    if a_i <= 0:
        return 0.0

    without = rank(profile.replace_buyer(i, DUMMY), spec)
    displaced = np.maximum(allocate_x(without, x).per_buyer - allocation.per_buyer, 0.0)
    displaced[i] = 0.0
    q_i = float(profile.quantities[i])

    payment = 0.0
    for j in np.flatnonzero(displaced > 0):
        phi_j = virtual_value(profile.values[j], profile.quantities[j], spec)
        price = max(0.0, invert_virtual_value(phi_j, q_i, spec))
        payment += price * displaced[j]
    return float(np.clip(payment, 0.0, spec.value_cap * a_i))


def allocation_probability(reported, stock, spec, approx, period, samples, rng):
    """Share of rival resamples in which `reported` gets its full reported quantity."""
    hits = 0
    for _ in range(samples):
        profile = sample_rivals(spec, rng, reported)
        _, _, allocation = decide(profile, stock, spec, approx, period)
        if abs(allocation.per_buyer[0] - reported.quantity) <= ALLOCATION_MATCH_TOLERANCE:
            hits += 1
    return hits / samples


def penalty(
    i,
    reported_quantity,
    allocated,
    true_quantity,
    profile,
    stock,
    spec,
    approx,
    period,
    mc_samples=PENALTY_SAMPLES,
    rng=None,
    probability=None,
):
    """Charge for an allocation beyond true demand.

    The charge is the value cap times the reported quantity divided by the
    probability of being allocated exactly that quantity, so its expectation
    over rivals exceeds any gain from overbidding.
    """
    if allocated <= true_quantity + ALLOCATION_MATCH_TOLERANCE:
        return 0.0
    if probability is None:
        rng = rng if rng is not None else np.random.default_rng()
        reported = BuyerType(float(profile.values[i]), float(reported_quantity))
        probability = allocation_probability(reported, stock, spec, approx, period, mc_samples, rng)
    if probability <= 0:
        logger.warning(f"penalty: reported quantity {reported_quantity} never allocated, using the cap")
        return PENALTY_CAP_FACTOR * spec.value_cap * spec.quantity_cap
    return spec.value_cap * reported_quantity / probability


def run_period(
    profile,
    stock,
    spec,
    approx,
    period,
    quad_points=QUAD_POINTS,
    true_quantities=None,
    penalty_samples=PENALTY_SAMPLES,
    rng=None,
):
    """Run the mechanism on one period's reports.

    With `true_quantities` given, buyers allocated beyond their true demand
    are charged the penalty; otherwise reports are taken as truthful.
    """
    size = profile.size
    if stock <= 0 or profile.arrivals == 0:
        zeros = np.zeros(size)
        return MechanismOutcome(zeros, zeros.copy(), zeros.copy(), 0.0, max(float(stock), 0.0))

    _, x, allocation = decide(profile, stock, spec, approx, period)
    payments = np.zeros(size)
    penalties = np.zeros(size)
    for i in np.flatnonzero(allocation.per_buyer > 0):
        payments[i] = payment_integral(
            i, profile, stock, spec, approx, period, quad_points, allocation=allocation.per_buyer[i]
        )
        if true_quantities is not None:
            penalties[i] = penalty(
                i,
                profile.quantities[i],
                allocation.per_buyer[i],
                true_quantities[i],
                profile,
                stock,
                spec,
                approx,
                period,
                penalty_samples,
                rng,
            )

    assert np.all(payments >= 0) and np.all(penalties >= 0)
    return MechanismOutcome(
        allocations=allocation.per_buyer,
        payments=payments,
        penalties=penalties,
        sold=allocation.sold,
        next_stock=max(float(stock) - allocation.sold, 0.0),
    )


def _check_samples(mc_samples):
    if mc_samples < MIN_INTERIM_SAMPLES:
        raise MarketSpecError(f"Interim estimates need at least {MIN_INTERIM_SAMPLES} samples, got {mc_samples}")


def interim_allocation(buyer, reported, stock, spec, approx, period, mc_samples, rng):
    """Expected allocation of `reported` over resampled rivals.

    `buyer` is the true type; the allocation only depends on the report.
    """
    _check_samples(mc_samples)
    return InterimEstimate.from_samples(allocation_samples(reported, stock, spec, approx, period, mc_samples, rng))


def allocation_samples(reported, stock, spec, approx, period, mc_samples, rng):
    draws = np.empty(mc_samples)
    for k in range(mc_samples):
        profile = sample_rivals(spec, rng, reported)
        _, _, allocation = decide(profile, stock, spec, approx, period)
        draws[k] = allocation.per_buyer[0]
    return draws


def utility_samples(
    true_type,
    reported,
    stock,
    spec,
    approx,
    period,
    mc_samples,
    rng,
    quad_points=QUAD_POINTS,
    penalty_samples=PENALTY_SAMPLES,
    penalty_seed=0,
):
    """Ex-post utilities of `true_type` reporting `reported`, one per rival draw.

    The penalty probability is estimated once per report on a separate
    stream so truthful and misreported draws share their rival streams.
    """
    probability = None
    draws = np.empty(mc_samples)
    for k in range(mc_samples):
        profile = sample_rivals(spec, rng, reported)
        _, _, allocation = decide(profile, stock, spec, approx, period)
        a = float(allocation.per_buyer[0])
        if a <= 0:
            draws[k] = 0.0
            continue
        pay = payment_integral(0, profile, stock, spec, approx, period, quad_points, allocation=a)
        charge = 0.0
        if a > true_type.quantity + ALLOCATION_MATCH_TOLERANCE:
            if probability is None:
                probability = allocation_probability(
                    reported, stock, spec, approx, period, penalty_samples, np.random.default_rng(penalty_seed)
                )
            charge = penalty(
                0, reported.quantity, a, true_type.quantity, profile, stock, spec, approx, period,
                probability=probability,
            )
        draws[k] = true_type.value * min(true_type.quantity, a) - pay - charge
    return draws


def interim_utility(
    true_type,
    reported,
    stock,
    spec,
    approx,
    period,
    mc_samples,
    rng,
    quad_points=QUAD_POINTS,
    penalty_samples=PENALTY_SAMPLES,
):
    _check_samples(mc_samples)
    draws = utility_samples(
        true_type, reported, stock, spec, approx, period, mc_samples, rng, quad_points, penalty_samples
    )
    return InterimEstimate.from_samples(draws)


@dataclass(frozen=True)
class RevenueSample:
    payments: float
    virtual_surplus: float
    sold: float


def run_mechanism_episode(spec, approx, rng, quad_points=QUAD_POINTS):
    """One truthful episode under the mechanism.

    Returns discounted payments next to the discounted virtual surplus the
    allocation earns; the two agree in expectation.
    """
    stock = float(spec.stock)
    payments = 0.0
    surplus = 0.0
    sold = 0.0
    for period in range(1, spec.horizon + 1):
        profile = sample_profile(spec, rng)
        ranked = rank(profile, spec)
        outcome = run_period(profile, stock, spec, approx, period, quad_points)
        weight = spec.discount ** (period - 1)
        payments += weight * float(outcome.payments.sum())
        surplus += weight * periodic_revenue(ranked, outcome.sold)
        sold += outcome.sold
        stock = outcome.next_stock
    return RevenueSample(payments=payments, virtual_surplus=surplus, sold=sold)
