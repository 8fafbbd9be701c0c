from django.db import models


class TrainingRun(models.Model):
    """A trained sell-quantity policy written to disk."""

    METHODS = [
        ("mc", "Monte Carlo regression"),
        ("ddpg", "DDPG"),
    ]

    method = models.CharField(max_length=10, choices=METHODS)
    horizon = models.IntegerField()
    stock = models.FloatField()
    seed = models.BigIntegerField()
    episodes = models.IntegerField()
    nodes = models.IntegerField(blank=True, null=True)  # MC only
    degree = models.IntegerField(blank=True, null=True)  # MC only
    policy_file = models.CharField(max_length=500)
    train_seconds = models.FloatField(default=0.0)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        unique_together = ("policy_file",)
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.get_method_display()} (T={self.horizon}, Q={self.stock:g}) -> {self.policy_file}"


class ExperimentResult(models.Model):
    """One row of the method comparison: a method evaluated on a scenario."""

    method = models.CharField(max_length=30)
    horizon = models.IntegerField()
    stock = models.FloatField()
    seed = models.BigIntegerField()
    mean_reward = models.FloatField()
    std_err = models.FloatField()
    train_seconds = models.FloatField()
    test_episodes = models.IntegerField()
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        unique_together = ("method", "horizon", "stock", "seed")
        ordering = ["horizon", "method"]
        indexes = [models.Index(fields=["horizon", "stock"], name="market_result_scenario_idx")]

    def __str__(self):
        return f"{self.method} ({self.horizon}, {self.stock:g}): {self.mean_reward:.3f}"


class AuditRun(models.Model):
    """Summary of one audit pass."""

    name = models.CharField(max_length=30)
    seed = models.BigIntegerField()
    samples = models.IntegerField()
    cells = models.IntegerField()
    hard_violations = models.IntegerField(default=0)
    noise_violations = models.IntegerField(default=0)
    worst_gap = models.FloatField(default=0.0)
    passed = models.BooleanField(default=False)
    csv_file = models.CharField(max_length=500, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        unique_together = ("name", "seed", "samples")
        ordering = ["-created_at"]

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name} seed={self.seed} ({status})"
