"""
Django settings for the minres_project project.

The project has no web surface: it hosts the uzawa_fem app, its management
command and the Celery application used to fan out convergence studies.
"""

import os
from pathlib import Path
import environ

# Initialize environ
env = environ.Env(
    DEBUG=(bool, False),
    MINRES_FINE_REFINEMENT=(int, 64),
    MINRES_OUTPUT_DIR=(str, 'out'),
    MINRES_SAMPLE_POINTS=(int, 1001),
    MINRES_INNER_TOL_START=(float, 1e-4),
    MINRES_INNER_TOL_KAPPA=(float, 0.5),
    MINRES_INNER_TOL_FLOOR=(float, 1e-10),
    MINRES_MAX_ITERS=(int, 50),
    MINRES_EPS=(float, 1e-8),
    MINRES_SEED=(int, 0),
    MINRES_RECORD_TIMINGS=(bool, False),
    MINRES_CONSTANTS_CACHE_TIMEOUT=(int, 3600),
    MINRES_STUDY_EVALS_PER_KNOT=(int, 40),
)

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Take environment variables from .env file
environ.Env.read_env(os.path.join(BASE_DIR, '.env'))

SECRET_KEY = env('SECRET_KEY', default='django-insecure-default-key-for-development')

DEBUG = env('DEBUG')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # Local apps
    "uzawa_fem.apps.UzawaFemConfig",
]

# No models: the solver keeps all state in memory and on disk as CSV
DATABASES = {}

# Cache (measured operator constants)
CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
        'LOCATION': env('MINRES_CACHE_LOCATION', default='minres-constants'),
    }
}

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Celery Configuration
# Studies run in-process unless a broker is configured.
CELERY_BROKER_URL = env('CELERY_BROKER_URL', default='memory://')
CELERY_RESULT_BACKEND = env('CELERY_RESULT_BACKEND', default='cache+memory://')
CELERY_TASK_ALWAYS_EAGER = env.bool('CELERY_TASK_ALWAYS_EAGER', default=True)
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_TIMEZONE = TIME_ZONE
CELERY_TASK_TRACK_STARTED = True
CELERY_TASK_TIME_LIMIT = 30 * 60

# Solver defaults; every entry is overridable from the environment
MINRES = {
    'FINE_REFINEMENT': env('MINRES_FINE_REFINEMENT'),
    'OUTPUT_DIR': env('MINRES_OUTPUT_DIR'),
    'SAMPLE_POINTS': env('MINRES_SAMPLE_POINTS'),
    'INNER_TOL_START': env('MINRES_INNER_TOL_START'),
    'INNER_TOL_KAPPA': env('MINRES_INNER_TOL_KAPPA'),
    'INNER_TOL_FLOOR': env('MINRES_INNER_TOL_FLOOR'),
    'MAX_ITERS': env('MINRES_MAX_ITERS'),
    'EPS': env('MINRES_EPS'),
    'SEED': env('MINRES_SEED'),
    'RECORD_TIMINGS': env('MINRES_RECORD_TIMINGS'),
    'CONSTANTS_CACHE_TIMEOUT': env('MINRES_CONSTANTS_CACHE_TIMEOUT'),
    # Study simplex budget per breakpoint; 0 runs study cases exactly as configured
    'STUDY_EVALS_PER_KNOT': env('MINRES_STUDY_EVALS_PER_KNOT'),
}

# Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': BASE_DIR / 'logs' / 'minres.log',
            'formatter': 'verbose',
        },
        'console': {
            'level': env('MINRES_CONSOLE_LOG_LEVEL', default='WARNING'),
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': 'INFO',
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': False,
        },
        'uzawa_fem': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}

# Create logs directory if it doesn't exist
os.makedirs(BASE_DIR / 'logs', exist_ok=True)
