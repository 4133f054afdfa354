import json

from django.db import models


class ExperimentRun(models.Model):
    """One invocation of an experiment recipe and where its files went"""

    EXPERIMENTS = (
        ('ml-map', 'Likelihood slices'),
        ('convergence', 'Estimator convergence'),
        ('track', 'Tracking'),
        ('rate-curve', 'Achievable rate'),
        ('monte-carlo', 'Monte-Carlo sweep'),
    )
    STATUSES = (
        ('finished', 'Finished'),
        ('failed', 'Failed'),
    )

    name = models.CharField(max_length=20, choices=EXPERIMENTS)
    preset = models.CharField(max_length=50, blank=True, default='')
    # u64 seeds do not fit a signed 64-bit column
    seed = models.CharField(max_length=20)
    config_hash = models.CharField(max_length=64, db_index=True)
    config = models.TextField(default='{}')
    output_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=10, choices=STATUSES, default='finished')
    message = models.TextField(blank=True, default='')

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ('-created_at',)

    def __str__(self):
        return f"{self.name} seed={self.seed} ({self.status})"

    def get_config(self):
        """Returns the config as a Python dictionary"""
        return json.loads(self.config)

    def set_config(self, config_dict):
        """Sets the config from a Python dictionary"""
        self.config = json.dumps(config_dict, sort_keys=True)


class RunArtifact(models.Model):
    """A file written by a run, with its checksum"""

    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='artifacts')
    file_name = models.CharField(max_length=200)
    rows = models.IntegerField(null=True, blank=True)
    sha256 = models.CharField(max_length=64)
    columns = models.TextField(default='[]')

    class Meta:
        unique_together = ('run', 'file_name')

    def __str__(self):
        return f"{self.file_name} ({self.run.name})"

    def get_columns(self):
        return json.loads(self.columns)

    def set_columns(self, columns):
        self.columns = json.dumps(list(columns))
