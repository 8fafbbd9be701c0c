"""
Shared plumbing for the market management commands.
"""

from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from market.config import load_market, load_seed
from market.exceptions import MarketError
from market.harness import load_policy
from market.simulation import MyopicPolicy, NeverSellPolicy, SellAllPolicy


class MarketCommand(BaseCommand):
    """Adds --config, --seed and --no-record, and turns MarketError into CommandError."""

    def add_arguments(self, parser):
        parser.add_argument(
            "--config",
            default=str(settings.STOCKAUCTION_MARKET_CONFIG),
            help="Market definition JSON file",
        )
        parser.add_argument(
            "--seed",
            type=int,
            help="Master seed for every random stream (default: the config file's seed, then STOCKAUCTION_SEED)",
        )
        parser.add_argument(
            "--no-record",
            action="store_true",
            help="Do not store a summary of the run in the database",
        )

    def handle(self, *args, **options):
        try:
            options["seed"] = self.resolve_seed(options)
            return self.run(**options)
        except MarketError as exc:
            raise CommandError(str(exc)) from exc

    def run(self, **options):
        raise NotImplementedError

    def resolve_seed(self, options):
        if options["seed"] is not None:
            return options["seed"]
        configured = load_seed(options["config"])
        return configured if configured is not None else settings.STOCKAUCTION_SEED

    def load_spec(self, options, horizon=None, stock=None):
        spec = load_market(options["config"])
        if horizon is not None or stock is not None:
            spec = spec.with_scenario(
                horizon if horizon is not None else spec.horizon,
                float(stock) if stock is not None else spec.stock,
            )
        return spec

    def rng(self, options):
        return np.random.default_rng(options["seed"])

    def output_path(self, value, default_name):
        if value:
            return Path(value)
        return Path(settings.STOCKAUCTION_OUTPUT_DIR) / default_name


BUILTIN_POLICIES = ("myopic", "sell-all", "never-sell")


def add_policy_arguments(parser):
    parser.add_argument("--policy-file", help="Policy JSON written by train_mc or train_ddpg")
    parser.add_argument(
        "--builtin",
        choices=BUILTIN_POLICIES,
        help="Use a reference policy instead of a policy file",
    )


def resolve_policy(options):
    if options.get("policy_file"):
        return load_policy(options["policy_file"])
    builtin = options.get("builtin") or "myopic"
    return {"myopic": MyopicPolicy, "sell-all": SellAllPolicy, "never-sell": NeverSellPolicy}[builtin]()


def align_spec(spec, policy):
    """Use the scenario a trained policy was fitted for."""
    approx = getattr(policy, "approx", None)
    if approx is not None:
        return spec.with_scenario(approx.horizon, approx.basis.stock_cap)
    if hasattr(policy, "stock_cap"):
        return spec.with_scenario(policy.horizon, policy.stock_cap)
    return spec
