from pathlib import Path
import os
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get("SECRET_KEY", "django-insecure-fallback-key")

DEBUG = os.environ.get("DEBUG", "True") == "True"

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    "rest_framework",
    "msmp_app",
]

# The compiler keeps no relational state; the default is never opened.
DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "msmpc.sqlite3",
    }
}

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# ─── Workers ───────────────────────────────────────────────────────────────
# Kept raw; training.worker_threads() validates it.
MSMPC_THREADS = os.environ.get("MSMPC_THREADS", str(os.cpu_count() or 1))

# ─── Celery ────────────────────────────────────────────────────────────────
CELERY_BROKER_URL = os.environ.get("REDIS_URL", "redis://localhost:6379/0")
CELERY_RESULT_BACKEND = os.environ.get("REDIS_URL", "redis://localhost:6379/0")
CELERY_WORKER_CONCURRENCY = int(MSMPC_THREADS) if MSMPC_THREADS.isdigit() else None
CELERY_TASK_ALWAYS_EAGER = os.environ.get("MSMPC_EAGER", "True") == "True"
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"
CELERY_ACCEPT_CONTENT = ["json"]

# ─── Training defaults (overridable with `msmpc train --config`) ─────────────
MSMPC_TRAINING = {
    "epochs": 20,
    "learning_rate": 0.001,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "seed": 0,
    "group_size": 16,
    "checkpoint_dir": os.environ.get("MSMPC_CHECKPOINT_DIR", "checkpoints"),
    "validation_every": 1,
}

# ─── Logging ────────────────────────────────────────────────────────────────
# stdout carries machine-readable output only, so everything logs to stderr.
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "stderr": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "plain",
        },
    },
    "root": {
        "handlers": ["stderr"],
        "level": os.environ.get("MSMPC_LOG_LEVEL", "WARNING"),
    },
}
