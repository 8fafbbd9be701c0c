"""
Episode simulation for sell-quantity policies.

A policy maps the period's ranked reports and the remaining stock to a sell
quantity. The episode reward is the discounted virtual surplus of what is
sold, which equals expected revenue under the mechanism.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .allocation import allocate_x, periodic_revenue, rank
from .model import sample_profile
from .sell_policy import sell_quantity

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeRow:
    period: int
    stock: float
    arrivals: int
    demand: float
    sold: float
    reward: float


@dataclass(frozen=True)
class EpisodeTrace:
    rows: tuple = field(default_factory=tuple)

    @property
    def total(self):
        return float(sum(row.reward for row in self.rows))

    @property
    def units_sold(self):
        return float(sum(row.sold for row in self.rows))

    def cumulative_sold(self):
        return np.cumsum([row.sold for row in self.rows])


class McPolicy:
    """Threshold policy against a fitted value approximation."""

    name = "mc"

    def __init__(self, approx):
        self.approx = approx

    def sell(self, ranked, stock, period, spec):
        return sell_quantity(ranked, stock, self.approx, period, spec.discount)


class MyopicPolicy(McPolicy):
    """Threshold policy that ignores the future (sells whenever virtual value is nonnegative)."""

    name = "myopic"

    def __init__(self):
        super().__init__(None)


class SellAllPolicy:
    name = "sell-all"

    def sell(self, ranked, stock, period, spec):
        return stock if period == 1 else 0.0


class NeverSellPolicy:
    name = "never-sell"

    def sell(self, ranked, stock, period, spec):
        return 0.0


def run_episode(policy, spec, rng, profiles=None):
    """Simulate one horizon; `profiles[t - 1]` overrides sampling for period t."""
    stock = float(spec.stock)
    rows = []
    for period in range(1, spec.horizon + 1):
        profile = profiles[period - 1] if profiles is not None else sample_profile(spec, rng)
        ranked = rank(profile, spec)
        x = float(np.clip(policy.sell(ranked, stock, period, spec), 0.0, stock))
        allocation = allocate_x(ranked, x)
        reward = spec.discount ** (period - 1) * periodic_revenue(ranked, x)
        rows.append(
            EpisodeRow(
                period=period,
                stock=stock,
                arrivals=profile.arrivals,
                demand=ranked.total_demand,
                sold=allocation.sold,
                reward=reward,
            )
        )
        stock = max(stock - allocation.sold, 0.0)
    return EpisodeTrace(rows=tuple(rows))
