"""
Audit incentive compatibility, individual rationality and the structural
properties of the mechanism, writing one CSV per audit.

Usage:
    python manage.py verify_ic --grid 5 --samples 20000
    python manage.py verify_ic --policy-file output/mc.json --audits ic ir
"""

import numpy as np
from django.core.management.base import CommandError
from django.db import transaction

from market import audit
from market.harness import load_policy
from market.management.base import MarketCommand
from market.models import AuditRun
from market.simulation import McPolicy

AUDITS = ("ic", "ir", "monotonicity", "envelope", "convexity", "revenue")


class Command(MarketCommand):
    help = "Run the statistical mechanism audits"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--policy-file", help="MC policy JSON; the myopic policy is used when omitted")
        parser.add_argument("--grid", type=int, default=5, help="Points per axis of the type grid")
        parser.add_argument("--samples", type=int, default=20_000, help="Rival draws per cell")
        parser.add_argument("--penalty-samples", type=int, default=10_000, help="Draws for the penalty probability")
        parser.add_argument("--quad-points", type=int, default=64, help="Quadrature points for payments")
        parser.add_argument("--period", type=int, default=1, help="Period t the buyer arrives in")
        parser.add_argument("--stock", type=float, help="Stock at the buyer's period (default: initial stock)")
        parser.add_argument("--episodes", type=int, default=10_000, help="Episodes for the revenue audit")
        parser.add_argument("--z", type=float, default=audit.Z_DEFAULT, help="Standard errors of slack")
        parser.add_argument("--audits", nargs="+", choices=AUDITS, default=list(AUDITS))
        parser.add_argument("--out-dir", help="Directory for the audit CSV files")

    def run(self, **options):
        spec = self.load_spec(options)
        approx = None
        if options["policy_file"]:
            policy = load_policy(options["policy_file"])
            if not isinstance(policy, McPolicy):
                raise CommandError("Audits need a threshold (MC) policy file")
            approx = policy.approx
            spec = spec.with_scenario(approx.horizon, approx.basis.stock_cap)
        if not 1 <= options["period"] <= spec.horizon:
            raise CommandError(f"Period must lie in [1, {spec.horizon}]")

        stock = options["stock"] if options["stock"] is not None else spec.stock
        grid = audit.type_grid(spec, options["grid"])
        values = sorted({v for v, _ in grid})
        quantities = sorted({q for _, q in grid})
        common = {
            "stock": stock,
            "mc_samples": options["samples"],
            "period": options["period"],
            "seed": options["seed"],
            "z": options["z"],
        }
        runners = {
            "ic": lambda: audit.audit_ic(
                spec, approx, grid, grid, quad_points=options["quad_points"],
                penalty_samples=options["penalty_samples"], **common,
            ),
            "ir": lambda: audit.audit_ir(spec, approx, grid, quad_points=options["quad_points"], **common),
            "monotonicity": lambda: audit.audit_monotonicity(spec, approx, values, quantities, **common),
            "envelope": lambda: audit.audit_envelope(
                spec, approx, quantities[len(quantities) // 2], quad_points=options["quad_points"], **common
            ),
            "convexity": lambda: audit.audit_convexity(
                spec, approx, quantities[len(quantities) // 2], np.linspace(0.0, values[-1], 2 * options["grid"] + 1),
                **common,
            ),
            "revenue": lambda: audit.audit_revenue_identity(
                spec, approx, options["episodes"], seed=options["seed"], z=options["z"],
                quad_points=options["quad_points"],
            ),
        }

        out_dir = self.output_path(options["out_dir"], "audits")
        out_dir.mkdir(parents=True, exist_ok=True)
        failed = 0
        for name in options["audits"]:
            self.stdout.write(f"Running {name} audit...")
            report = runners[name]()
            path = out_dir / f"{name}.csv"
            with open(path, "w", newline="", encoding="utf-8") as f:
                report.write_csv(f)

            if not options["no_record"]:
                worst = report.worst
                with transaction.atomic():
                    AuditRun.objects.update_or_create(
                        name=name,
                        seed=options["seed"],
                        samples=options["samples"],
                        defaults={
                            "cells": len(report.cells),
                            "hard_violations": report.hard_violations,
                            "noise_violations": report.noise_violations,
                            "worst_gap": worst.gap if worst is not None else 0.0,
                            "passed": report.passed,
                            "csv_file": str(path),
                        },
                    )

            style = self.style.SUCCESS if report.passed else self.style.WARNING
            self.stdout.write(style(report.summary()))
            failed += report.hard_violations > 0

        if failed:
            self.stdout.write(self.style.WARNING(f"{failed} audit(s) with hard violations"))
        else:
            self.stdout.write(self.style.SUCCESS("Audits complete!"))
