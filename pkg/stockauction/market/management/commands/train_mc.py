"""
Fit the value-to-go by Monte Carlo regression and write the coefficients.

Usage:
    python manage.py train_mc --m 50 --n 4 --episodes 10000 --out output/mc.json
"""

import time

from django.db import transaction

from market.management.base import MarketCommand
from market.models import TrainingRun
from market.value_approx import fit_mc


class Command(MarketCommand):
    help = "Train the Monte Carlo regression value approximation"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--m", type=int, default=50, help="Number of Chebyshev nodes")
        parser.add_argument("--n", type=int, default=4, help="Polynomial degree")
        parser.add_argument("--episodes", type=int, default=10_000, help="Training episodes")
        parser.add_argument("--horizon", type=int, help="Override the horizon T")
        parser.add_argument("--stock", type=float, help="Override the initial stock Q")
        parser.add_argument("--out", help="Where to write the policy JSON")

    def run(self, **options):
        spec = self.load_spec(options, options["horizon"], options["stock"])
        out = self.output_path(options["out"], f"mc-T{spec.horizon}-Q{spec.stock:g}-m{options['m']}.json")

        self.stdout.write(
            f"Training MC regression: T={spec.horizon}, Q={spec.stock:g}, "
            f"m={options['m']}, n={options['n']}, {options['episodes']} episodes"
        )
        started = time.perf_counter()
        approx = fit_mc(spec, options["m"], options["n"], options["episodes"], self.rng(options), seed=options["seed"])
        seconds = time.perf_counter() - started
        approx.save(out)

        if not options["no_record"]:
            with transaction.atomic():
                TrainingRun.objects.update_or_create(
                    policy_file=str(out),
                    defaults={
                        "method": "mc",
                        "horizon": spec.horizon,
                        "stock": spec.stock,
                        "seed": options["seed"],
                        "episodes": options["episodes"],
                        "nodes": options["m"],
                        "degree": options["n"],
                        "train_seconds": seconds,
                    },
                )

        self.stdout.write(self.style.SUCCESS(f"Wrote {out} ({seconds:.1f}s)"))
