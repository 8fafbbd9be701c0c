"""
Evaluate a sell-quantity policy on fresh episodes.

Usage:
    python manage.py evaluate --policy-file output/mc.json --episodes 20
    python manage.py evaluate --builtin myopic --mechanism-csv output/outcomes.csv
"""

import csv

from market.ddpg import evaluate_policy
from market.harness import MECHANISM_HEADER, full_info_oracle, mechanism_trace, sample_horizon
from market.management.base import MarketCommand, add_policy_arguments, align_spec, resolve_policy
from market.simulation import McPolicy


class Command(MarketCommand):
    help = "Evaluate a policy and optionally write per-buyer mechanism outcomes"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        add_policy_arguments(parser)
        parser.add_argument("--episodes", type=int, default=20, help="Test episodes")
        parser.add_argument(
            "--full-info",
            action="store_true",
            help="Also report the full-information benchmark on the same episodes",
        )
        parser.add_argument(
            "--mechanism-csv",
            help="Write per-period outcomes (t, stock, sold, buyer, v, q, alloc, payment, penalty) of one episode",
        )

    def run(self, **options):
        policy = resolve_policy(options)
        spec = self.load_spec(options)
        spec = align_spec(spec, policy)

        rng = self.rng(options)
        horizons = [sample_horizon(spec, rng) for _ in range(options["episodes"])]
        evaluation = evaluate_policy(policy, spec, options["episodes"], None, profiles=horizons)
        self.stdout.write(
            f"{policy.name}: mean reward {evaluation.mean:.4f} (std err {evaluation.stderr:.4f}) "
            f"over {options['episodes']} episodes"
        )

        if options["full_info"]:
            rewards = [full_info_oracle(profiles, spec).total for profiles in horizons]
            self.stdout.write(f"full-info: mean reward {sum(rewards) / len(rewards):.4f}")

        if options["mechanism_csv"]:
            if not isinstance(policy, McPolicy):
                self.stdout.write(self.style.WARNING("Mechanism outcomes need a threshold policy; skipped"))
            else:
                path = self.output_path(options["mechanism_csv"], "outcomes.csv")
                path.parent.mkdir(parents=True, exist_ok=True)
                with open(path, "w", newline="", encoding="utf-8") as f:
                    writer = csv.writer(f)
                    writer.writerow(MECHANISM_HEADER)
                    writer.writerows(mechanism_trace(spec, policy.approx, rng))
                self.stdout.write(f"Wrote {path}")

        self.stdout.write(self.style.SUCCESS("Evaluation complete!"))
