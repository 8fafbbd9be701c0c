import csv
import io
import json
import shutil
import tempfile
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from market.models import AuditRun, ExperimentResult, TrainingRun

MARKET = {
    "horizon": 2,
    "stock": 2,
    "discount": 0.95,
    "arrivals": {"family": "tabulated", "probabilities": [0.5, 0.5]},
    "quantity": {"family": "uniform", "upper": 2},
    "value": {"family": "exponential", "scale": 1.0},
}


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)
        settings_override = override_settings(STOCKAUCTION_OUTPUT_DIR=self.tmp)
        settings_override.enable()
        self.addCleanup(settings_override.disable)
        self.market = self.tmp / "market.json"
        self.market.write_text(json.dumps(MARKET))

    def call(self, name, *args):
        out = io.StringIO()
        call_command(name, "--config", str(self.market), *args, stdout=out)
        return out.getvalue()

    def train_mc(self, *args):
        path = self.tmp / "mc.json"
        self.call("train_mc", "--m", "3", "--n", "2", "--episodes", "3", "--out", str(path), *args)
        return path


class TrainCommandTests(CommandTestCase):
    def test_train_mc(self):
        path = self.train_mc()
        self.assertTrue(path.exists())
        self.assertEqual(json.loads(path.read_text())["kind"], "mc")
        run = TrainingRun.objects.get(policy_file=str(path))
        self.assertEqual((run.method, run.nodes, run.degree, run.episodes), ("mc", 3, 2, 3))

    def test_train_mc_scenario_override(self):
        path = self.train_mc("--horizon", "3", "--stock", "4")
        data = json.loads(path.read_text())
        self.assertEqual((data["T"], data["Q"]), (3, 4.0))

    def test_train_mc_without_record(self):
        self.train_mc("--no-record")
        self.assertFalse(TrainingRun.objects.exists())

    def test_train_ddpg_default_path(self):
        output = self.call("train_ddpg", "--episodes", "3", "--hidden", "4")
        path = self.tmp / "ddpg-T2-Q2.json"
        self.assertTrue(path.exists())
        self.assertIn("Transitions stored: 6", output)
        self.assertEqual(TrainingRun.objects.get().method, "ddpg")

    def test_bad_node_count(self):
        with self.assertRaises(CommandError):
            self.call("train_mc", "--m", "2", "--n", "4", "--episodes", "1")

    def test_missing_config(self):
        with self.assertRaises(CommandError):
            call_command("train_mc", "--config", str(self.tmp / "missing.json"), stdout=io.StringIO())


class EvaluateCommandTests(CommandTestCase):
    def test_evaluate_policy_file(self):
        policy = self.train_mc()
        outcomes = self.tmp / "outcomes.csv"
        output = self.call(
            "evaluate", "--policy-file", str(policy), "--episodes", "3", "--full-info",
            "--mechanism-csv", str(outcomes),
        )
        self.assertIn("mc: mean reward", output)
        self.assertIn("full-info: mean reward", output)
        with open(outcomes, newline="") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0][:3], ["t", "stock", "sold"])

    def test_evaluate_builtin(self):
        output = self.call("evaluate", "--builtin", "never-sell", "--episodes", "2")
        self.assertIn("never-sell: mean reward 0.0000", output)

    def test_unknown_policy_kind(self):
        policy = self.tmp / "bandit.json"
        policy.write_text(json.dumps({"version": 1, "kind": "bandit"}))
        with self.assertRaises(CommandError):
            self.call("evaluate", "--policy-file", str(policy))

    def test_cumalloc_to_stdout(self):
        output = self.call("cumalloc", "--builtin", "sell-all", "--episodes", "2")
        lines = output.splitlines()
        self.assertEqual(lines[0], "t,mean_cumulative_sold")
        self.assertEqual(len(lines), 3)

    def test_cumalloc_to_file(self):
        path = self.tmp / "series" / "cumalloc.csv"
        self.call("cumalloc", "--builtin", "myopic", "--episodes", "2", "--out", str(path))
        self.assertTrue(path.exists())


class VerifyIcCommandTests(CommandTestCase):
    def audit(self, *args):
        return self.call(
            "verify_ic", "--grid", "2", "--samples", "20", "--penalty-samples", "20", "--quad-points", "8",
            "--episodes", "5", "--out-dir", str(self.tmp / "audits"), *args,
        )

    def test_writes_one_csv_per_audit(self):
        output = self.audit("--audits", "ir", "monotonicity")
        self.assertTrue((self.tmp / "audits" / "ir.csv").exists())
        self.assertTrue((self.tmp / "audits" / "monotonicity.csv").exists())
        self.assertEqual(AuditRun.objects.count(), 2)
        self.assertIn("monotonicity:", output)

    def test_with_mc_policy(self):
        policy = self.train_mc()
        self.audit("--policy-file", str(policy), "--audits", "ir")
        self.assertTrue(AuditRun.objects.get(name="ir").passed)

    def test_rejects_ddpg_policy(self):
        policy = self.tmp / "ddpg.json"
        self.call("train_ddpg", "--episodes", "2", "--hidden", "4", "--out", str(policy))
        with self.assertRaises(CommandError):
            self.audit("--policy-file", str(policy))

    def test_rejects_period_outside_horizon(self):
        with self.assertRaises(CommandError):
            self.audit("--period", "5")


class ReproduceCommandTests(CommandTestCase):
    def setUp(self):
        super().setUp()
        self.market = self.tmp / "experiment.json"
        self.market.write_text(
            json.dumps(
                {
                    "market": MARKET,
                    "experiment": {
                        "scenarios": [[2, 2], [3, 3]],
                        "methods": ["mc", "full-info"],
                        "mc_nodes": [3],
                        "mc_degree": 2,
                        "train_episodes": 3,
                        "test_episodes": 2,
                    },
                }
            )
        )

    def test_reproduce_one_scenario(self):
        self.call("reproduce", "--scenario", "2x2")
        with open(self.tmp / "table.csv", newline="") as f:
            rows = list(csv.reader(f))
        self.assertEqual([row[0] for row in rows[1:]], ["mc(m=3)", "full-info"])
        self.assertEqual(ExperimentResult.objects.count(), 2)

    def test_rerun_updates_results(self):
        self.call("reproduce", "--scenario", "2x2")
        self.call("reproduce", "--scenario", "2x2", "--test-episodes", "3")
        self.assertEqual(ExperimentResult.objects.count(), 2)
        self.assertEqual(set(ExperimentResult.objects.values_list("test_episodes", flat=True)), {3})

    def test_experiment_seed_is_recorded(self):
        data = json.loads(self.market.read_text())
        self.market.write_text(json.dumps({**data, "seed": 7}))
        self.call("reproduce", "--scenario", "2x2")
        self.assertEqual(set(ExperimentResult.objects.values_list("seed", flat=True)), {7})

    def test_unknown_scenario(self):
        with self.assertRaises(CommandError):
            self.call("reproduce", "--scenario", "9x9")
        with self.assertRaises(CommandError):
            self.call("reproduce", "--scenario", "ten")


class SeedResolutionTests(CommandTestCase):
    def write_market(self, **extra):
        self.market.write_text(json.dumps({**MARKET, **extra}))

    def test_config_seed(self):
        self.write_market(seed=7)
        path = self.train_mc()
        self.assertEqual(TrainingRun.objects.get().seed, 7)
        self.assertEqual(json.loads(path.read_text())["seed"], 7)

    def test_command_line_seed_wins(self):
        self.write_market(seed=7)
        self.train_mc("--seed", "3")
        self.assertEqual(TrainingRun.objects.get().seed, 3)

    @override_settings(STOCKAUCTION_SEED=11)
    def test_settings_seed_when_config_has_none(self):
        self.train_mc()
        self.assertEqual(TrainingRun.objects.get().seed, 11)

    def test_config_seed_changes_the_fit(self):
        self.write_market(seed=7)
        first = json.loads(self.train_mc("--no-record").read_text())["coeffs"]
        self.write_market(seed=8)
        second = json.loads(self.train_mc("--no-record").read_text())["coeffs"]
        self.assertNotEqual(first, second)

    def test_invalid_config_seed(self):
        self.write_market(seed="seven")
        with self.assertRaises(CommandError):
            self.train_mc()
