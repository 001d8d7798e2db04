"""
Persisted experiment results.

Models:

Experiment: One ``run --store`` invocation with its configuration document and status.
MetricsRecord: One aggregated (policy, horizon) cell of an experiment.
"""

from django.core.validators import MinValueValidator
from django.db import models


class Experiment(models.Model):
    """
    An experiment grid run from a configuration file.

    Attributes:
    - name (str): Name given in the configuration.
    - family (str): Scenario family (``replay`` for CSV-backed scenarios).
    - mode (str): 'horizon' or 'budget'.
    - seed (int): Base seed of the run streams.
    - num_runs (int): Runs per cell.
    - config (dict): The validated configuration document.
    - status (str): running, finished or failed.
    """

    RUNNING = 'running'
    FINISHED = 'finished'
    FAILED = 'failed'
    STATUS_CHOICES = (
        (RUNNING, 'Running'),
        (FINISHED, 'Finished'),
        (FAILED, 'Failed'),
    )

    name = models.CharField(max_length=120)
    family = models.CharField(max_length=80)
    mode = models.CharField(max_length=10, default='horizon')
    seed = models.PositiveBigIntegerField(default=0)
    num_runs = models.PositiveIntegerField(validators=[MinValueValidator(1)])
    config = models.JSONField(default=dict)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default=RUNNING)
    created_at = models.DateTimeField(auto_now_add=True, editable=False)
    finished_at = models.DateTimeField(blank=True, null=True)

    class Meta:
        db_table = "Experiment"
        ordering = ('-created_at',)

    def __str__(self):
        return f"{self.name} ({self.family}, {self.status})"


class MetricsRecord(models.Model):
    """
    Aggregates of one (policy, horizon) cell with 95% bootstrap error bars.
    Undefined metrics are stored as null; ``failure`` labels an aborted cell.
    """

    experiment = models.ForeignKey(Experiment, on_delete=models.CASCADE, related_name='metrics')
    policy = models.CharField(max_length=80)
    scenario = models.CharField(max_length=80)
    mode = models.CharField(max_length=10, default='horizon')
    horizon = models.FloatField()
    num_runs = models.PositiveIntegerField()
    mse = models.FloatField(null=True)
    mse_low = models.FloatField(null=True)
    mse_high = models.FloatField(null=True)
    scaled_mse = models.FloatField(null=True)
    relative_regret_pct = models.FloatField(null=True)
    relative_regret_low = models.FloatField(null=True)
    relative_regret_high = models.FloatField(null=True)
    coverage = models.FloatField(null=True)
    coverage_low = models.FloatField(null=True)
    coverage_high = models.FloatField(null=True)
    confseq_coverage = models.FloatField(null=True)
    mean_ci_size = models.FloatField(null=True)
    mean_ci_size_low = models.FloatField(null=True)
    mean_ci_size_high = models.FloatField(null=True)
    mean_confseq_size = models.FloatField(null=True)
    kappa_mean = models.JSONField(default=list)
    kappa_std = models.JSONField(default=list)
    flags = models.JSONField(default=dict)
    failure = models.TextField(blank=True)

    class Meta:
        db_table = "MetricsRecord"
        ordering = ('experiment', 'policy', 'horizon')
        unique_together = (('experiment', 'policy', 'horizon'),)

    def __str__(self):
        return f"{self.policy} @ {self.horizon:g}"
