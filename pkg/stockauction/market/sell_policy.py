"""
Threshold sell policy.

Selling one more unit earns the virtual value of the marginal buyer and gives
up the discounted slope of next period's value at the remaining stock. That
marginal value is nonincreasing in the quantity sold, so the optimal quantity
is where it first turns negative (or the whole stock if it never does). Units
are never sold to buyers with a nonpositive virtual value, even when a fitted
continuation has a negative slope near full stock. The scan below walks the
demand segments in rank order and bisects inside the segment where the sign
changes.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .allocation import allocate_x, rank
from .model import BuyerType, sample_profile

logger = logging.getLogger(__name__)

BISECTION_STEPS = 60
MONOTONE_TOLERANCE = 1e-9


def _zero_slope(remaining):
    return np.zeros(np.shape(remaining))


@dataclass(frozen=True, eq=False)
class MarginalProfile:
    """Piecewise structure of the marginal value for one ranked profile.

    Segment j covers sold quantities [breakpoints[j-1], breakpoints[j]) and
    carries the virtual value segment_phis[j]; beyond the last breakpoint
    the segment value is 0. `continuation_slope(y)` is the discounted slope
    of next period's value at remaining stock y.
    """

    breakpoints: np.ndarray
    segment_phis: np.ndarray
    continuation_slope: Callable = _zero_slope

    @property
    def total_demand(self):
        return float(self.breakpoints[-1]) if self.breakpoints.size else 0.0


def continuation_slope(approx, period, discount):
    """Discounted slope of next period's value; zero in the last period."""
    if approx is None or period >= approx.horizon:
        return _zero_slope

    def slope(remaining):
        return discount * approx.slope(period + 1, remaining)

    return slope


def marginal_profile(ranked, approx, period, discount):
    return MarginalProfile(ranked.cum_demand, ranked.phis, continuation_slope(approx, period, discount))


def segment_phi(mp, x):
    j = np.searchsorted(mp.breakpoints, x, side="right")
    padded = np.append(mp.segment_phis, 0.0)
    return padded[j]


def marginal_value(mp, x, stock):
    """Right-limit marginal value of selling x out of `stock` units."""
    mv = segment_phi(mp, x) - mp.continuation_slope(np.maximum(stock - np.asarray(x, dtype=float), 0.0))
    return float(mv) if np.ndim(mv) == 0 else mv


def optimal_x(mp, stock):
    return float(optimal_x_many(mp, np.array([stock]))[0])


def optimal_x_many(mp, stocks):
    """Threshold sell quantity for each stock level in `stocks`."""
    stocks = np.atleast_1d(np.asarray(stocks, dtype=float))
    rows = stocks.size
    lows = np.concatenate([[0.0], mp.breakpoints[:-1]]) if mp.breakpoints.size else np.zeros(0)
    return threshold_quantities(
        np.broadcast_to(lows, (rows, lows.size)),
        np.broadcast_to(mp.breakpoints, (rows, lows.size)),
        np.broadcast_to(mp.segment_phis, (rows, lows.size)),
        stocks,
        mp.continuation_slope,
    )


def threshold_quantities(lows, highs, phis, stocks, slope):
    """Row-wise threshold search.

    Each row b has segments [lows[b, j], highs[b, j]) with virtual value
    phis[b, j]; zero-length segments are ignored. Returns the infimum of the
    negative-marginal-value set on [0, min(stock, demand)] per row, taking
    the first sign change in rank order. Segments with a nonpositive virtual
    value always stop the search, so no units go to those buyers whatever
    the continuation slope.
    """
    stocks = np.asarray(stocks, dtype=float)
    if lows.shape[1] == 0:
        return np.zeros(stocks.shape)

    totals = highs[:, -1]
    ends = np.minimum(stocks, totals)
    result = ends.copy()

    rights = np.minimum(highs, ends[:, None])
    valid = lows < ends[:, None]
    mv_left = phis - slope(np.maximum(stocks[:, None] - lows, 0.0))
    mv_right = phis - slope(np.maximum(stocks[:, None] - rights, 0.0))

    events = np.empty((lows.shape[0], 2 * lows.shape[1]), dtype=bool)
    events[:, 0::2] = valid & ((mv_left < 0) | (phis <= 0))
    events[:, 1::2] = valid & (mv_right < 0)
    hit = events.any(axis=1)
    if not hit.any():
        return result

    first = events.argmax(axis=1)
    segment = first // 2
    at_left = hit & (first % 2 == 0)
    rows = np.arange(lows.shape[0])
    result[at_left] = lows[rows[at_left], segment[at_left]]

    inside = hit & ~at_left
    if inside.any():
        idx = rows[inside]
        seg = segment[inside]
        result[inside] = _bisect_rows(
            lows[idx, seg], rights[idx, seg], phis[idx, seg], stocks[inside], slope
        )
    return result


def _bisect_rows(lo, hi, phi, stock, slope):
    # Invariant: marginal value >= 0 at lo and < 0 at hi, for every row.
    lo = lo.copy()
    hi = hi.copy()
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        nonnegative = phi - slope(np.maximum(stock - mid, 0.0)) >= 0
        lo = np.where(nonnegative, mid, lo)
        hi = np.where(nonnegative, hi, mid)
    return lo


def sell_quantity(ranked, stock, approx, period, discount):
    return optimal_x(marginal_profile(ranked, approx, period, discount), stock)


@dataclass(frozen=True)
class MonotonicityCheckReport:
    trials: int
    value_violations: int
    quantity_violations: int
    allocation_violations: int
    dummy_violations: int
    worst_decrease: float

    @property
    def violations(self):
        return (
            self.value_violations
            + self.quantity_violations
            + self.allocation_violations
            + self.dummy_violations
        )


def monotone_in_type_check(spec, approx, trials, rng, value_step=0.5, quantity_step=0.25):
    """Raise one buyer's value or quantity and check the sell quantity does not drop.

    Raising a quantity must also not lower that buyer's own allocation, and
    filling the first dummy slot with a zero-demand type must change nothing.
    """
    counts = {"value": 0, "quantity": 0, "allocation": 0, "dummy": 0}
    worst = 0.0

    def decide(profile, stock, period):
        ranked = rank(profile, spec)
        x = sell_quantity(ranked, stock, approx, period, spec.discount)
        return x, allocate_x(ranked, x)

    for _ in range(trials):
        period = int(rng.integers(1, spec.horizon + 1))
        stock = float(rng.uniform(0.0, spec.stock))
        profile = sample_profile(spec, rng)
        i = int(rng.integers(profile.arrivals))
        buyer = profile.buyer(i)
        if buyer.quantity <= 0:
            continue
        x, allocation = decide(profile, stock, period)

        raised_value = profile.replace_buyer(i, BuyerType(buyer.value + value_step, buyer.quantity))
        x_value, _ = decide(raised_value, stock, period)
        if x_value < x - MONOTONE_TOLERANCE:
            counts["value"] += 1
            worst = max(worst, x - x_value)

        new_quantity = min(buyer.quantity + quantity_step, spec.quantity_cap)
        raised_quantity = profile.replace_buyer(i, BuyerType(buyer.value, new_quantity))
        x_quantity, allocation_quantity = decide(raised_quantity, stock, period)
        if x_quantity < x - MONOTONE_TOLERANCE:
            counts["quantity"] += 1
            worst = max(worst, x - x_quantity)
        if allocation_quantity.per_buyer[i] < allocation.per_buyer[i] - MONOTONE_TOLERANCE:
            counts["allocation"] += 1
            worst = max(worst, allocation.per_buyer[i] - allocation_quantity.per_buyer[i])

        if profile.arrivals < profile.size:
            ghost = profile.replace_buyer(profile.arrivals, BuyerType(buyer.value + value_step, 0.0))
            x_dummy, _ = decide(ghost, stock, period)
            if abs(x_dummy - x) > MONOTONE_TOLERANCE:
                counts["dummy"] += 1

    report = MonotonicityCheckReport(
        trials=trials,
        value_violations=counts["value"],
        quantity_violations=counts["quantity"],
        allocation_violations=counts["allocation"],
        dummy_violations=counts["dummy"],
        worst_decrease=worst,
    )
    logger.info(f"monotone_in_type_check: {report.violations} violations in {trials} trials")
    return report
