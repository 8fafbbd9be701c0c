"""
Mean cumulative units sold per period under a policy.

Usage:
    python manage.py cumalloc --policy-file output/ddpg.json --episodes 20
"""

from market.harness import cumulative_allocation_series, write_series
from market.management.base import MarketCommand, add_policy_arguments, align_spec, resolve_policy


class Command(MarketCommand):
    help = "Write the cumulative allocation series of a policy"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        add_policy_arguments(parser)
        parser.add_argument("--episodes", type=int, default=20, help="Episodes to average")
        parser.add_argument("--out", help="Where to write the CSV (default: stdout)")

    def run(self, **options):
        policy = resolve_policy(options)
        spec = self.load_spec(options)
        spec = align_spec(spec, policy)

        series = cumulative_allocation_series(policy, spec, options["episodes"], self.rng(options))
        if options["out"]:
            out = self.output_path(options["out"], "cumalloc.csv")
            out.parent.mkdir(parents=True, exist_ok=True)
            with open(out, "w", newline="", encoding="utf-8") as f:
                write_series(series, f)
            self.stdout.write(self.style.SUCCESS(f"Wrote {out}"))
        else:
            write_series(series, self.stdout)
