"""
Within-period allocation: rank buyers by virtual value and fill demand greedily.

Selling x units in one period is a linear knapsack, so the revenue-optimal
split serves the highest virtual values first. Zero-quantity entries (dummies)
are left out of the ranking entirely and never receive units.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import SizeCapError
from .model import virtual_value

logger = logging.getLogger(__name__)

LP_ORACLE_MAX_BUYERS = 8
FEASIBILITY_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class RankedProfile:
    """Positive-demand buyers sorted by virtual value, highest first.

    `order` holds the profile slot of each ranked buyer; `size` is the number
    of slots in the originating profile.
    """

    order: np.ndarray
    phis: np.ndarray
    quantities: np.ndarray
    cum_demand: np.ndarray
    size: int

    @property
    def count(self):
        return self.order.size

    @property
    def total_demand(self):
        return float(self.cum_demand[-1]) if self.count else 0.0

    @property
    def demand_before(self):
        return self.cum_demand - self.quantities


@dataclass(frozen=True, eq=False)
class PeriodAllocation:
    per_buyer: np.ndarray
    sold: float


def rank(profile, spec):
    active = np.flatnonzero(profile.quantities > 0)
    quantities = profile.quantities[active]
    phis = np.atleast_1d(virtual_value(profile.values[active], quantities, spec))
    return rank_by_phi(phis, quantities, active, profile.size)


def rank_by_phi(phis, quantities, slots, size):
    """Stable sort by virtual value, descending; ties keep slot order."""
    phis = np.asarray(phis, dtype=float)
    order = np.argsort(-phis, kind="stable")
    sorted_quantities = np.asarray(quantities, dtype=float)[order]
    return RankedProfile(
        order=np.asarray(slots)[order],
        phis=phis[order],
        quantities=sorted_quantities,
        cum_demand=np.cumsum(sorted_quantities),
        size=size,
    )


def boundary_index(ranked, x):
    """Number of ranked buyers whose full demand fits within x units."""
    return int(np.searchsorted(ranked.cum_demand, x, side="right"))


def fill_sorted(ranked, x):
    """Greedy fill in rank order; returns units per ranked position."""
    return np.clip(x - ranked.demand_before, 0.0, ranked.quantities)


def allocate_x(ranked, x):
    filled = fill_sorted(ranked, x)
    per_buyer = np.zeros(ranked.size)
    per_buyer[ranked.order] = filled
    sold = float(filled.sum())
    assert np.all(filled >= 0) and np.all(filled <= ranked.quantities + FEASIBILITY_SLACK)
    assert sold <= max(x, 0.0) + FEASIBILITY_SLACK
    return PeriodAllocation(per_buyer=per_buyer, sold=sold)


def periodic_revenue(ranked, x):
    """Sum of virtual value times allocated units when selling x units."""
    if ranked.count == 0:
        return 0.0
    return float(ranked.phis @ fill_sorted(ranked, x))


def periodic_revenue_many(ranked, xs):
    xs = np.asarray(xs, dtype=float)
    if ranked.count == 0:
        return np.zeros(xs.shape)
    filled = np.clip(xs[..., None] - ranked.demand_before, 0.0, ranked.quantities)
    return filled @ ranked.phis


def lp_oracle(profile, spec, x):
    """Solve the period LP by trying every service order of the buyers.

    Each vertex of {0 <= a_i <= q_i, sum a_i = x} is a greedy fill in some
    order, so the best order gives the LP optimum. Demand beyond the total is
    unsellable and x is capped there.
    """
    active = np.flatnonzero(profile.quantities > 0)
    if active.size > LP_ORACLE_MAX_BUYERS:
        raise SizeCapError(f"LP oracle handles at most {LP_ORACLE_MAX_BUYERS} buyers, got {active.size}")
    if active.size == 0 or x <= 0:
        return 0.0
    quantities = profile.quantities[active]
    phis = np.atleast_1d(virtual_value(profile.values[active], quantities, spec))
    x = min(x, float(quantities.sum()))

    orders = np.array(list(itertools.permutations(range(active.size))))
    ordered_quantities = quantities[orders]
    before = np.cumsum(ordered_quantities, axis=1) - ordered_quantities
    filled = np.clip(x - before, 0.0, ordered_quantities)
    return float(np.max(np.sum(filled * phis[orders], axis=1)))


def dual_objective(ranked, x, mu):
    """Objective of the period LP dual at multiplier mu."""
    return float(ranked.quantities @ np.maximum(0.0, ranked.phis - mu) + x * mu)
