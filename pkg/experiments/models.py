from django.db import models


class ExperimentRun(models.Model):
    """Ledger entry for one CLI invocation; numerical outputs live in the artifact directory."""
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    command = models.CharField(max_length=50)
    preset = models.CharField(max_length=50)
    config_digest = models.CharField(max_length=64, db_index=True, help_text='SHA-256 of the canonical config JSON')
    out_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running')
    started_at = models.DateTimeField(auto_now_add=True)
    completed_at = models.DateTimeField(null=True, blank=True)
    stages_completed = models.JSONField(default=list)
    failed_checks = models.IntegerField(default=0)
    errors = models.JSONField(default=list)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.command} {self.preset} {self.started_at.strftime('%Y-%m-%d %H:%M')} - {self.status}"
