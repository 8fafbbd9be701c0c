"""
Experiment orchestration: the full-information benchmark, the method
comparison across scenarios and the cumulative allocation series.
"""

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .allocation import rank
from .config import read_json
from .ddpg import DdpgAgent, evaluate_policy, train_ddpg
from .exceptions import MarketSpecError, PolicyFileError
from .mechanism import run_period
from .model import sample_profile
from .simulation import EpisodeRow, EpisodeTrace, McPolicy, MyopicPolicy, run_episode
from .value_approx import ValueApprox, fit_mc

logger = logging.getLogger(__name__)

ORACLE_MODES = ("horizon", "myopic")
TABLE_HEADER = ["method", "horizon", "stock", "mean_reward", "std_err", "train_seconds"]


def sample_horizon(spec, rng):
    return [sample_profile(spec, rng) for _ in range(spec.horizon)]


def full_info_oracle(all_profiles, spec, mode="horizon"):
    """Benchmark that sees every period's reports in advance.

    In "horizon" mode the whole stock is spread over all (period, buyer)
    pairs greedily by discounted virtual value, which solves the offline
    knapsack. In "myopic" mode each period is solved on its own reports
    with no value placed on leftover stock.
    """
    if mode not in ORACLE_MODES:
        raise MarketSpecError(f"Unknown oracle mode {mode!r}")
    if len(all_profiles) < spec.horizon:
        raise MarketSpecError(f"Need {spec.horizon} profiles, got {len(all_profiles)}")
    if mode == "myopic":
        return run_episode(MyopicPolicy(), spec, None, profiles=all_profiles)

    ranked = [rank(all_profiles[t], spec) for t in range(spec.horizon)]
    weights = spec.discount ** np.arange(spec.horizon)
    periods = np.concatenate([np.full(r.count, t) for t, r in enumerate(ranked)]).astype(int)
    phis = np.concatenate([r.phis for r in ranked])
    quantities = np.concatenate([r.quantities for r in ranked])
    scores = phis * weights[periods]

    keep = scores > 0
    order = np.argsort(-scores[keep], kind="stable")
    kept_quantities = quantities[keep][order]
    filled = np.clip(spec.stock - (np.cumsum(kept_quantities) - kept_quantities), 0.0, kept_quantities)

    sold = np.bincount(periods[keep][order], weights=filled, minlength=spec.horizon)
    reward = np.bincount(periods[keep][order], weights=filled * scores[keep][order], minlength=spec.horizon)

    rows = []
    stock = float(spec.stock)
    for t in range(spec.horizon):
        rows.append(
            EpisodeRow(
                period=t + 1,
                stock=stock,
                arrivals=all_profiles[t].arrivals,
                demand=ranked[t].total_demand,
                sold=float(sold[t]),
                reward=float(reward[t]),
            )
        )
        stock = max(stock - float(sold[t]), 0.0)
    return EpisodeTrace(rows=tuple(rows))


@dataclass(frozen=True)
class ExperimentRow:
    method: str
    horizon: int
    stock: float
    mean_reward: float
    std_err: float
    train_seconds: float

    def as_list(self):
        return [
            self.method,
            self.horizon,
            f"{self.stock:g}",
            f"{self.mean_reward:.4f}",
            f"{self.std_err:.4f}",
            f"{self.train_seconds:.2f}",
        ]


def _method_plan(config):
    plan = []
    for method in config.methods:
        if method == "mc":
            plan.extend((f"mc(m={m})", m) for m in config.mc_nodes)
        else:
            plan.append((method, None))
    return plan


def run_scenario(config, horizon, stock, seed_sequence):
    """Train and evaluate every method on one (T, Q) scenario.

    All methods are evaluated on the same sampled test horizons.
    """
    spec = config.market.with_scenario(horizon, stock)
    plan = _method_plan(config)
    test_seed, *train_seeds = seed_sequence.spawn(len(plan) + 1)
    test_rng = np.random.default_rng(test_seed)
    horizons = [sample_horizon(spec, test_rng) for _ in range(config.test_episodes)]

    rows = []
    for (label, nodes), train_seed in zip(plan, train_seeds):
        train_rng = np.random.default_rng(train_seed)
        started = time.perf_counter()
        if label == "full-info":
            rewards = [full_info_oracle(profiles, spec).total for profiles in horizons]
            evaluation_mean = float(np.mean(rewards))
            evaluation_err = float(np.std(rewards, ddof=1) / np.sqrt(len(rewards))) if len(rewards) > 1 else 0.0
            seconds = 0.0
        else:
            if label == "ddpg":
                cfg = dataclasses.replace(config.ddpg, episodes=config.train_episodes)
                policy = train_ddpg(spec, cfg, train_rng).agent
            else:
                degree = min(config.mc_degree, nodes - 1)
                policy = McPolicy(fit_mc(spec, nodes, degree, config.train_episodes, train_rng))
            seconds = time.perf_counter() - started
            evaluation = evaluate_policy(policy, spec, config.test_episodes, None, profiles=horizons)
            evaluation_mean, evaluation_err = evaluation.mean, evaluation.stderr

        row = ExperimentRow(label, horizon, float(stock), evaluation_mean, evaluation_err, seconds)
        logger.info(f"({horizon}, {stock:g}) {label}: {row.mean_reward:.3f} ({row.std_err:.3f}) in {seconds:.1f}s")
        rows.append(row)
    return rows


def compare_methods(config, scenarios=None):
    """Method comparison rows for each scenario, seeded from `config.seed`."""
    scenarios = tuple(scenarios) if scenarios is not None else config.scenarios
    sequences = np.random.SeedSequence(config.seed).spawn(len(config.scenarios))
    rows = []
    for (horizon, stock), sequence in zip(config.scenarios, sequences):
        if (horizon, stock) not in scenarios:
            continue
        rows.extend(run_scenario(config, horizon, stock, sequence))
    return rows


def write_table(rows, stream):
    writer = csv.writer(stream)
    writer.writerow(TABLE_HEADER)
    for row in rows:
        writer.writerow(row.as_list())


def cumulative_allocation_series(policy, spec, episodes, rng):
    """Mean units sold by the end of each period, as (t, units) pairs."""
    if episodes < 1:
        raise MarketSpecError(f"Need at least one episode, got {episodes}")
    totals = np.zeros(spec.horizon)
    for _ in range(episodes):
        totals += run_episode(policy, spec, rng).cumulative_sold()
    means = totals / episodes
    return [(t + 1, float(means[t])) for t in range(spec.horizon)]


def write_series(series, stream):
    writer = csv.writer(stream)
    writer.writerow(["t", "mean_cumulative_sold"])
    for t, units in series:
        writer.writerow([t, f"{units:.6f}"])


MECHANISM_HEADER = ["t", "stock", "sold", "buyer_id", "v", "q", "alloc", "payment", "penalty"]


def mechanism_trace(spec, approx, rng, quad_points=64):
    """Per-buyer outcome rows of one truthful episode under the mechanism."""
    rows = []
    stock = float(spec.stock)
    for period in range(1, spec.horizon + 1):
        profile = sample_profile(spec, rng)
        outcome = run_period(profile, stock, spec, approx, period, quad_points)
        for i in range(profile.arrivals):
            rows.append(
                [
                    period,
                    f"{stock:.6g}",
                    f"{outcome.sold:.6g}",
                    i,
                    f"{profile.values[i]:.6g}",
                    f"{profile.quantities[i]:.6g}",
                    f"{outcome.allocations[i]:.6g}",
                    f"{outcome.payments[i]:.6g}",
                    f"{outcome.penalties[i]:.6g}",
                ]
            )
        stock = outcome.next_stock
    return rows


def load_policy(path):
    """Read a policy file written by train_mc or train_ddpg."""
    data = read_json(path)
    kind = data.get("kind")
    if kind == "mc":
        return McPolicy(ValueApprox.from_dict(data))
    if kind == "ddpg":
        return DdpgAgent.from_dict(data)
    raise PolicyFileError(f"Unknown policy kind {kind!r} in {path}")
