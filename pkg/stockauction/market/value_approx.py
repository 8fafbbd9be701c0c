"""
Value-to-go approximation.

The expected value of holding s units at the start of period t is approximated
by a Chebyshev series in s, one coefficient row per period, fitted to Monte
Carlo node values (`fit_mc`). `exact_dp_oracle` solves the same Bellman
recursion by brute force on small grids and is used to bound the fit error.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import chebyshev

from .allocation import periodic_revenue_many, rank
from .exceptions import (
    DomainError,
    MarketSpecError,
    PolicyFileError,
    SingularRegressionError,
    SizeCapError,
)
from .model import sample_profile
from .sell_policy import marginal_profile, optimal_x_many

logger = logging.getLogger(__name__)

FILE_VERSION = 1
RIDGE = 1e-12
DOMAIN_SLACK = 1e-9
DP_MAX_GRID = 200
DP_MAX_HORIZON = 5


@dataclass(frozen=True)
class ChebyshevBasis:
    degree: int
    stock_cap: float

    def __post_init__(self):
        if self.degree < 0:
            raise MarketSpecError(f"Basis degree must be nonnegative, got {self.degree}")
        if self.stock_cap <= 0:
            raise MarketSpecError(f"Stock cap must be positive, got {self.stock_cap}")

    @property
    def size(self):
        return self.degree + 1

    def scale(self, s):
        """Map stock in [0, Q] onto [-1, 1]."""
        s = np.asarray(s, dtype=float)
        if np.any(s < -DOMAIN_SLACK) or np.any(s > self.stock_cap + DOMAIN_SLACK):
            raise DomainError(f"Stock {s} outside [0, {self.stock_cap}]")
        return np.clip(2.0 * s / self.stock_cap - 1.0, -1.0, 1.0)

    def vander(self, s):
        return chebyshev.chebvander(self.scale(s), self.degree)


@dataclass(frozen=True, eq=False)
class NodeSet:
    nodes: np.ndarray

    def __len__(self):
        return self.nodes.size


def chebyshev_eval(basis, coeff_row, s):
    value = chebyshev.chebval(basis.scale(s), np.asarray(coeff_row, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def chebyshev_slope(basis, coeff_row, s):
    """Derivative in s of the series, including the 2/Q domain factor."""
    derivative = chebyshev.chebder(np.asarray(coeff_row, dtype=float))
    slope = chebyshev.chebval(basis.scale(s), derivative) * (2.0 / basis.stock_cap)
    return float(slope) if np.ndim(slope) == 0 else slope


def chebyshev_nodes(m, stock_cap):
    """Chebyshev nodes resized from [-1, 1] to [0, stock_cap]."""
    if m < 1:
        raise MarketSpecError(f"Need at least one node, got {m}")
    k = np.arange(1, m + 1)
    return NodeSet(0.5 * stock_cap * (1.0 + np.cos((2 * k - 1) * np.pi / (2 * m))))


@dataclass(frozen=True, eq=False)
class ValueApprox:
    """Per-period coefficient rows; period horizon + 1 is identically zero."""

    coeffs: np.ndarray
    basis: ChebyshevBasis
    seed: int | None = None
    episodes: int = 0
    nodes: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return self.coeffs.shape[0]

    def value(self, period, s):
        if period > self.horizon:
            return np.zeros(np.shape(s)) if np.ndim(s) else 0.0
        return chebyshev_eval(self.basis, self.coeffs[period - 1], s)

    def slope(self, period, s):
        if period > self.horizon:
            return np.zeros(np.shape(s)) if np.ndim(s) else 0.0
        return chebyshev_slope(self.basis, self.coeffs[period - 1], s)

    def to_dict(self):
        return {
            "version": FILE_VERSION,
            "kind": "mc",
            "T": self.horizon,
            "n": self.basis.degree,
            "Q": self.basis.stock_cap,
            "m": self.nodes,
            "coeffs": self.coeffs.tolist(),
            "seed": self.seed,
            "episodes": self.episodes,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != FILE_VERSION or data.get("kind") != "mc":
            raise PolicyFileError(
                f"Unsupported value approximation file (version={data.get('version')}, kind={data.get('kind')})"
            )
        try:
            coeffs = np.asarray(data["coeffs"], dtype=float).reshape(data["T"], data["n"] + 1)
            basis = ChebyshevBasis(int(data["n"]), float(data["Q"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise PolicyFileError(f"Malformed value approximation file: {exc}") from exc
        return cls(
            coeffs=coeffs,
            basis=basis,
            seed=data.get("seed"),
            episodes=int(data.get("episodes", 0)),
            nodes=data.get("m"),
            metadata=data.get("metadata") or {},
        )

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise PolicyFileError(f"Could not read {path}: {exc}") from exc
        return cls.from_dict(data)


def regression_operator(basis, nodes, ridge=RIDGE, anchor=None):
    """Matrix P with coeffs = P @ node_values (ridge normal equations).

    With `anchor` set, the fitted series is constrained to be exactly zero at
    that stock level; the constrained normal equations are solved through
    their saddle-point system.
    """
    design = basis.vander(nodes)
    if np.linalg.matrix_rank(design) < basis.size:
        raise SingularRegressionError(
            f"Design matrix of {len(nodes)} nodes has rank below {basis.size}"
        )
    gram = design.T @ design + ridge * np.eye(basis.size)
    if anchor is None:
        return np.linalg.solve(gram, design.T)

    row = basis.vander(np.array([anchor]))[0]
    system = np.zeros((basis.size + 1, basis.size + 1))
    system[: basis.size, : basis.size] = gram
    system[: basis.size, -1] = row
    system[-1, : basis.size] = row
    rhs = np.vstack([design.T, np.zeros((1, len(nodes)))])
    return np.linalg.solve(system, rhs)[: basis.size]


def fit_coefficients(basis, nodes, values, ridge=RIDGE, anchor=None):
    """Least-squares coefficients for values at nodes (rows of values are fitted independently)."""
    operator = regression_operator(basis, np.asarray(nodes, dtype=float), ridge, anchor)
    return np.asarray(values, dtype=float) @ operator.T


def residual_scale(approx, period):
    """Largest gap between the fitted series and its node values."""
    nodes = chebyshev_nodes(approx.nodes, approx.basis.stock_cap).nodes
    node_values = np.asarray(approx.metadata["node_values"][period - 1])
    return float(np.max(np.abs(approx.value(period, nodes) - node_values)))


def fit_mc(spec, m, n, episodes, rng, profiles=None, seed=None):
    """Monte Carlo regression of the value-to-go.

    Periods run backwards inside every episode. For each node the period's
    sell quantity is the exact threshold quantity against the current fit of
    the next period, node values are running means over episodes, and the
    period's row is refitted after every update.

    No node sits at zero stock, so when there are more nodes than basis
    functions the fit is pinned to zero there. With exactly n + 1 nodes the
    series interpolates the node values instead.

    `profiles[t - 1][e]` may supply the profile for period t in episode e + 1
    instead of sampling.
    """
    if episodes < 1:
        raise MarketSpecError(f"Need at least one episode, got {episodes}")
    if n + 1 > m:
        raise MarketSpecError(f"{n + 1} basis functions need at least as many nodes, got {m}")
    if profiles is not None and any(len(row) < episodes for row in profiles):
        raise MarketSpecError("Supplied profiles do not cover every episode")

    horizon = spec.horizon
    basis = ChebyshevBasis(n, spec.stock)
    nodes = chebyshev_nodes(m, spec.stock).nodes
    operator = regression_operator(basis, nodes, anchor=0.0 if m > n + 1 else None)

    node_values = np.zeros((horizon, m))
    visits = np.zeros(horizon, dtype=int)
    coeffs = np.zeros((horizon, basis.size))
    current = ValueApprox(coeffs, basis)
    report_every = max(1, episodes // 10)

    for episode in range(1, episodes + 1):
        for period in range(horizon, 0, -1):
            if profiles is not None:
                profile = profiles[period - 1][episode - 1]
            else:
                profile = sample_profile(spec, rng)
            ranked = rank(profile, spec)
            mp = marginal_profile(ranked, current, period, spec.discount)
            sold = optimal_x_many(mp, nodes)
            remaining = np.maximum(nodes - sold, 0.0)
            new_values = periodic_revenue_many(ranked, sold) + spec.discount * current.value(
                period + 1, remaining
            )

            visits[period - 1] += 1
            i = visits[period - 1]
            node_values[period - 1] = ((i - 1) / i) * node_values[period - 1] + new_values / i
            coeffs[period - 1] = operator @ node_values[period - 1]

        if episode % report_every == 0:
            logger.info(f"fit_mc m={m} n={n}: episode {episode}/{episodes}")

    approx = ValueApprox(
        coeffs=coeffs.copy(),
        basis=basis,
        seed=seed,
        episodes=episodes,
        nodes=m,
        metadata={"node_values": node_values.tolist()},
    )
    residuals = [residual_scale(approx, period) for period in range(1, horizon + 1)]
    approx.metadata["residuals"] = residuals
    logger.info(f"fit_mc m={m} n={n}: largest node residual {max(residuals):.4g}")
    return approx


@dataclass(frozen=True, eq=False)
class TabulatedValue:
    """Value table on a stock grid; row `horizon` is the zero boundary."""

    stocks: np.ndarray
    values: np.ndarray

    @property
    def horizon(self):
        return self.values.shape[0] - 1

    def value(self, period, s):
        return np.interp(s, self.stocks, self.values[period - 1])


def exact_dp_oracle(spec, stock_grid, action_grid, sample_profiles):
    """Brute-force the Bellman recursion on a stock grid.

    The expectation over profiles is the mean over `sample_profiles[t - 1]`.
    Candidate sell quantities are the action grid, every demand breakpoint of
    the profile, and the whole stock; off-grid continuation values are
    linearly interpolated.
    """
    if stock_grid > DP_MAX_GRID or action_grid > DP_MAX_GRID:
        raise SizeCapError(f"Grids are capped at {DP_MAX_GRID} points")
    if spec.horizon > DP_MAX_HORIZON:
        raise SizeCapError(f"Horizon is capped at {DP_MAX_HORIZON}, got {spec.horizon}")
    if len(sample_profiles) < spec.horizon or any(len(row) == 0 for row in sample_profiles):
        raise MarketSpecError("Every period needs at least one sample profile")

    stocks = np.linspace(0.0, spec.stock, stock_grid)
    actions = np.linspace(0.0, spec.stock, action_grid)
    values = np.zeros((spec.horizon + 1, stock_grid))

    for period in range(spec.horizon, 0, -1):
        following = values[period]
        total = np.zeros(stock_grid)
        for profile in sample_profiles[period - 1]:
            ranked = rank(profile, spec)
            candidates = np.concatenate([actions, ranked.cum_demand])
            feasible = candidates[None, :] <= stocks[:, None]
            remaining = np.clip(stocks[:, None] - candidates[None, :], 0.0, spec.stock)
            objective = periodic_revenue_many(ranked, candidates)[None, :] + spec.discount * np.interp(
                remaining, stocks, following
            )
            objective = np.where(feasible, objective, -np.inf)
            sell_all = periodic_revenue_many(ranked, stocks) + spec.discount * following[0]
            total += np.maximum(objective.max(axis=1), sell_all)
        values[period - 1] = total / len(sample_profiles[period - 1])
        logger.debug(f"exact_dp_oracle: period {period} solved")

    return TabulatedValue(stocks=stocks, values=values)
