"""
Train the DDPG sell-quantity policy and write actor and critic.

Usage:
    python manage.py train_ddpg --episodes 10000 --out output/ddpg.json
"""

import dataclasses

from django.db import transaction

from market.ddpg import DdpgConfig, train_ddpg
from market.management.base import MarketCommand
from market.models import TrainingRun


class Command(MarketCommand):
    help = "Train the DDPG actor-critic policy"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--episodes", type=int, default=10_000, help="Training episodes")
        parser.add_argument("--hidden", type=int, nargs="+", help="Hidden layer widths (default 64 64 64)")
        parser.add_argument("--horizon", type=int, help="Override the horizon T")
        parser.add_argument("--stock", type=float, help="Override the initial stock Q")
        parser.add_argument("--out", help="Where to write the policy JSON")

    def run(self, **options):
        spec = self.load_spec(options, options["horizon"], options["stock"])
        cfg = DdpgConfig(episodes=options["episodes"])
        if options["hidden"]:
            cfg = dataclasses.replace(cfg, hidden=tuple(options["hidden"]))
        out = self.output_path(options["out"], f"ddpg-T{spec.horizon}-Q{spec.stock:g}.json")

        self.stdout.write(f"Training DDPG: T={spec.horizon}, Q={spec.stock:g}, {cfg.episodes} episodes")
        result = train_ddpg(spec, cfg, self.rng(options))
        result.agent.save(out)

        if not options["no_record"]:
            with transaction.atomic():
                TrainingRun.objects.update_or_create(
                    policy_file=str(out),
                    defaults={
                        "method": "ddpg",
                        "horizon": spec.horizon,
                        "stock": spec.stock,
                        "seed": options["seed"],
                        "episodes": cfg.episodes,
                        "train_seconds": result.seconds,
                    },
                )

        self.stdout.write(f"  Transitions stored: {result.transitions}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {out} ({result.seconds:.1f}s)"))
