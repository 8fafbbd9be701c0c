"""
Declarative market and experiment definitions.

Markets are JSON objects such as::

    {
      "horizon": 10, "stock": 10, "discount": 0.99,
      "arrivals": {"family": "poisson", "rate": 3, "max_arrivals": 30},
      "quantity": {"family": "uniform", "upper": 4},
      "value": {"family": "exponential", "scale": 1.0}
    }

Experiments wrap a market with the scenarios and methods to run.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .ddpg import DdpgConfig
from .exceptions import MarketSpecError
from .model import (
    ExponentialValue,
    MarketSpec,
    PointQuantity,
    TabulatedArrivals,
    TabulatedQuantity,
    TabulatedValue,
    TruncatedPoisson,
    UniformQuantity,
)

logger = logging.getLogger(__name__)

SCENARIOS = ((10, 10), (30, 30), (100, 100))
METHODS = ("mc", "ddpg", "full-info")


def _require(section, key, name):
    try:
        return section[key]
    except KeyError:
        raise MarketSpecError(f"{name} is missing {key!r}") from None


def _tabulated(section, name):
    return np.asarray(_require(section, "grid", name), dtype=float), np.asarray(
        _require(section, "cdf", name), dtype=float
    )


def build_arrivals(section):
    family = _require(section, "family", "arrivals")
    if family == "poisson":
        return TruncatedPoisson(
            rate=float(_require(section, "rate", "arrivals")),
            max_arrivals=int(section.get("max_arrivals", 30)),
        )
    if family == "tabulated":
        return TabulatedArrivals(np.asarray(_require(section, "probabilities", "arrivals"), dtype=float))
    raise MarketSpecError(f"Unknown arrivals family {family!r}")


def build_quantities(section):
    family = _require(section, "family", "quantity")
    if family == "uniform":
        return UniformQuantity(upper=float(_require(section, "upper", "quantity")))
    if family == "point":
        return PointQuantity(value=float(_require(section, "value", "quantity")))
    if family == "tabulated":
        return TabulatedQuantity(*_tabulated(section, "quantity"))
    raise MarketSpecError(f"Unknown quantity family {family!r}")


def build_values(section):
    family = _require(section, "family", "value")
    if family == "exponential":
        return ExponentialValue(scale=float(section.get("scale", 1.0)))
    if family == "tabulated":
        return TabulatedValue(*_tabulated(section, "value"))
    raise MarketSpecError(f"Unknown value family {family!r}")


def market_from_dict(data):
    optional = {
        key: float(data[key])
        for key in ("value_cap", "value_cap_quantile", "value_cap_epsilon")
        if data.get(key) is not None
    }
    return MarketSpec(
        horizon=int(_require(data, "horizon", "market")),
        stock=float(_require(data, "stock", "market")),
        discount=float(_require(data, "discount", "market")),
        arrivals=build_arrivals(_require(data, "arrivals", "market")),
        quantities=build_quantities(_require(data, "quantity", "market")),
        values=build_values(_require(data, "value", "market")),
        **optional,
    )


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise MarketSpecError(f"Config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise MarketSpecError(f"Invalid JSON in {path}: {exc}") from exc


def config_seed(data):
    seed = data.get("seed")
    if seed is None:
        return None
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise MarketSpecError(f"Config seed must be a nonnegative integer, got {seed!r}")
    return seed


def _first_seed(*candidates):
    return next(int(s) for s in candidates if s is not None)


def load_seed(path):
    """The top-level "seed" of a market or experiment file, or None."""
    return config_seed(read_json(path))


def load_market(path):
    data = read_json(path)
    spec = market_from_dict(data.get("market", data))
    logger.debug(f"Loaded market from {path}: T={spec.horizon}, Q={spec.stock}")
    return spec


@dataclass(frozen=True)
class ExperimentConfig:
    market: MarketSpec
    scenarios: tuple = SCENARIOS
    methods: tuple = METHODS
    mc_nodes: tuple = (5, 10, 20, 50)
    mc_degree: int = 4
    train_episodes: int = 10_000
    test_episodes: int = 20
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    seed: int = 1

    def __post_init__(self):
        for horizon, stock in self.scenarios:
            if horizon < 1 or stock <= 0:
                raise MarketSpecError(f"Invalid scenario ({horizon}, {stock})")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise MarketSpecError(f"Unknown methods: {sorted(unknown)}")
        if self.train_episodes < 1 or self.test_episodes < 1:
            raise MarketSpecError("Episode counts must be positive")


def experiment_from_dict(data, seed=None):
    experiment = data.get("experiment", {})
    ddpg_options = dict(experiment.get("ddpg", {}))
    if "hidden" in ddpg_options:
        ddpg_options["hidden"] = tuple(ddpg_options["hidden"])
    try:
        ddpg = DdpgConfig(**{**ddpg_options, "episodes": int(experiment.get("train_episodes", 10_000))})
    except TypeError as exc:
        raise MarketSpecError(f"Invalid ddpg options: {exc}") from exc
    return ExperimentConfig(
        market=market_from_dict(data.get("market", data)),
        scenarios=tuple(tuple(s) for s in experiment.get("scenarios", SCENARIOS)),
        methods=tuple(experiment.get("methods", METHODS)),
        mc_nodes=tuple(experiment.get("mc_nodes", (5, 10, 20, 50))),
        mc_degree=int(experiment.get("mc_degree", 4)),
        train_episodes=int(experiment.get("train_episodes", 10_000)),
        test_episodes=int(experiment.get("test_episodes", 20)),
        ddpg=ddpg,
        seed=_first_seed(seed, config_seed(data), 1),
    )


def load_experiment(path, seed=None):
    return experiment_from_dict(read_json(path), seed)
