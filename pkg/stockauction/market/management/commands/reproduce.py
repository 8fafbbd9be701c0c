"""
Train and compare every method on the configured scenarios.

Usage:
    python manage.py reproduce --config config/experiment.json --scenario 10x10
"""

import dataclasses

from django.core.management.base import CommandError
from django.db import transaction

from market.config import load_experiment
from market.harness import compare_methods, write_table
from market.management.base import MarketCommand
from market.models import ExperimentResult


def parse_scenario(value):
    try:
        horizon, stock = value.lower().split("x")
        return int(horizon), float(stock)
    except ValueError:
        raise CommandError(f"Scenario must look like 10x10, got {value!r}") from None


class Command(MarketCommand):
    help = "Reproduce the method comparison table"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--scenario", action="append", help="Scenario TxQ; repeat for several (default: all)")
        parser.add_argument("--train-episodes", type=int, help="Override training episodes")
        parser.add_argument("--test-episodes", type=int, help="Override test episodes")
        parser.add_argument("--out", help="Where to write the CSV")

    def run(self, **options):
        config = load_experiment(options["config"], seed=options["seed"])
        overrides = {}
        if options["train_episodes"]:
            overrides["train_episodes"] = options["train_episodes"]
        if options["test_episodes"]:
            overrides["test_episodes"] = options["test_episodes"]
        if overrides:
            config = dataclasses.replace(config, **overrides)

        scenarios = None
        if options["scenario"]:
            scenarios = [parse_scenario(s) for s in options["scenario"]]
            unknown = [s for s in scenarios if s not in config.scenarios]
            if unknown:
                raise CommandError(f"Scenarios not in the experiment: {unknown}")

        rows = compare_methods(config, scenarios)
        out = self.output_path(options["out"], "table.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="", encoding="utf-8") as f:
            write_table(rows, f)

        if not options["no_record"]:
            with transaction.atomic():
                for row in rows:
                    ExperimentResult.objects.update_or_create(
                        method=row.method,
                        horizon=row.horizon,
                        stock=row.stock,
                        seed=config.seed,
                        defaults={
                            "mean_reward": row.mean_reward,
                            "std_err": row.std_err,
                            "train_seconds": row.train_seconds,
                            "test_episodes": config.test_episodes,
                        },
                    )

        for row in rows:
            self.stdout.write(f"  {row.method:>10} ({row.horizon}, {row.stock:g}): {row.mean_reward:.3f} ({row.std_err:.3f})")
        self.stdout.write(self.style.SUCCESS(f"Wrote {out}"))
