from django.contrib import admin

from .models import AuditRun, ExperimentResult, TrainingRun


@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = ("method", "horizon", "stock", "seed", "episodes", "train_seconds", "created_at")
    list_filter = ("method",)
    search_fields = ("policy_file",)


@admin.register(ExperimentResult)
class ExperimentResultAdmin(admin.ModelAdmin):
    list_display = ("method", "horizon", "stock", "mean_reward", "std_err", "train_seconds")
    list_filter = ("method", "horizon")


@admin.register(AuditRun)
class AuditRunAdmin(admin.ModelAdmin):
    list_display = ("name", "seed", "samples", "cells", "hard_violations", "passed", "created_at")
    list_filter = ("name", "passed")
