import os
from celery import Celery

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "Msmpc.settings")

app = Celery("Msmpc")
app.config_from_object("django.conf:settings", namespace="CELERY")

# One gradient task is a full forward/backward pass; hand them out one at a time.
app.conf.worker_prefetch_multiplier = 1
app.conf.task_routes = {"msmp_app.tasks.compute_sample_gradients": {"queue": "gradients"}}

app.autodiscover_tasks()
