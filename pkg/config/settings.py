from pathlib import Path
import environ

BASE_DIR = Path(__file__).resolve().parent.parent

env = environ.Env()
environ.Env.read_env(BASE_DIR / '.env')

SECRET_KEY = env('SECRET_KEY', default='dbeta-local-only')
DEBUG = env.bool('DEBUG', default=True)
ALLOWED_HOSTS = env.list('ALLOWED_HOSTS', default=['localhost', '127.0.0.1'])

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'ensembles',
    'experiments',
]

DATABASES = {
    'default': env.db('DATABASE_URL', default=f"sqlite:///{BASE_DIR / 'runs.sqlite3'}"),
}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {'format': '{asctime} {levelname} {name}: {message}', 'style': '{'},
    },
    'handlers': {
        'console': {'class': 'logging.StreamHandler', 'formatter': 'plain'},
    },
    'root': {'handlers': ['console'], 'level': env('DBETA_LOG_LEVEL', default='INFO')},
}

# Numerics
DBETA_THREADS = env.int('DBETA_THREADS', default=1)
DBETA_OUT_DIR = env('DBETA_OUT_DIR', default='out')
DBETA_ENUMERATION_CAP = env.int('DBETA_ENUMERATION_CAP', default=10**8)
DBETA_RECOMPUTE_INTERVAL = env.int('DBETA_RECOMPUTE_INTERVAL', default=10**5)
DBETA_BATCHES = env.int('DBETA_BATCHES', default=50)
DBETA_MIN_CUMULANT_SAMPLES = env.int('DBETA_MIN_CUMULANT_SAMPLES', default=1000)
DBETA_CONTOUR_RTOL = env.float('DBETA_CONTOUR_RTOL', default=1e-9)
DBETA_CONTOUR_MAX_NODES = env.int('DBETA_CONTOUR_MAX_NODES', default=2**14)
DBETA_SOLVER_MAX_ITER = env.int('DBETA_SOLVER_MAX_ITER', default=20000)
DBETA_SOLVER_TOL = env.float('DBETA_SOLVER_TOL', default=1e-8)
DBETA_TRUNCATION_SAFETY = env.float('DBETA_TRUNCATION_SAFETY', default=1.5)
DBETA_TAIL_EPSILON = env.float('DBETA_TAIL_EPSILON', default=0.1)

# Celery
CELERY_BROKER_URL = env('CELERY_BROKER_URL', default='redis://localhost:6379/1')
CELERY_RESULT_BACKEND = CELERY_BROKER_URL
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TASK_TRACK_STARTED = True
CELERY_BROKER_CONNECTION_RETRY_ON_STARTUP = True
# Runs inline unless a worker pool is deployed
CELERY_TASK_ALWAYS_EAGER = env.bool('CELERY_TASK_ALWAYS_EAGER', default=True)
CELERY_TASK_EAGER_PROPAGATES = True
