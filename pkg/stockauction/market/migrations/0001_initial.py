from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="AuditRun",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("name", models.CharField(max_length=30)),
                ("seed", models.BigIntegerField()),
                ("samples", models.IntegerField()),
                ("cells", models.IntegerField()),
                ("hard_violations", models.IntegerField(default=0)),
                ("noise_violations", models.IntegerField(default=0)),
                ("worst_gap", models.FloatField(default=0.0)),
                ("passed", models.BooleanField(default=False)),
                ("csv_file", models.CharField(blank=True, max_length=500)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
            ],
            options={
                "ordering": ["-created_at"],
                "unique_together": {("name", "seed", "samples")},
            },
        ),
        migrations.CreateModel(
            name="ExperimentResult",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("method", models.CharField(max_length=30)),
                ("horizon", models.IntegerField()),
                ("stock", models.FloatField()),
                ("seed", models.BigIntegerField()),
                ("mean_reward", models.FloatField()),
                ("std_err", models.FloatField()),
                ("train_seconds", models.FloatField()),
                ("test_episodes", models.IntegerField()),
                ("created_at", models.DateTimeField(auto_now_add=True)),
            ],
            options={
                "ordering": ["horizon", "method"],
                "indexes": [models.Index(fields=["horizon", "stock"], name="market_result_scenario_idx")],
                "unique_together": {("method", "horizon", "stock", "seed")},
            },
        ),
        migrations.CreateModel(
            name="TrainingRun",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("method", models.CharField(choices=[("mc", "Monte Carlo regression"), ("ddpg", "DDPG")], max_length=10)),
                ("horizon", models.IntegerField()),
                ("stock", models.FloatField()),
                ("seed", models.BigIntegerField()),
                ("episodes", models.IntegerField()),
                ("nodes", models.IntegerField(blank=True, null=True)),
                ("degree", models.IntegerField(blank=True, null=True)),
                ("policy_file", models.CharField(max_length=500)),
                ("train_seconds", models.FloatField(default=0.0)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
            ],
            options={
                "ordering": ["-created_at"],
                "unique_together": {("policy_file",)},
            },
        ),
    ]
