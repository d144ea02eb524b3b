"""Celery app for dbeta: Metropolis chains and whole pipeline runs are dispatched as tasks."""
import os
from celery import Celery

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings')

app = Celery('dbeta')
app.config_from_object('django.conf:settings', namespace='CELERY')
app.autodiscover_tasks()
