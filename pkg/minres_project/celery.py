"""Celery application for convergence studies.

Each study entry is one `run_case_task`. With the default settings the tasks
run eagerly in the calling process; point CELERY_BROKER_URL at a real broker
and set CELERY_TASK_ALWAYS_EAGER=False to spread a study over workers.
"""
import os

from celery import Celery

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'minres_project.settings')

app = Celery('minres_project')

# CELERY_* entries of the Django settings configure the app
app.config_from_object('django.conf:settings', namespace='CELERY')

# Picks up uzawa_fem.tasks
app.autodiscover_tasks()
