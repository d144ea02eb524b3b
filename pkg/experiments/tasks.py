import logging
from celery import shared_task

from ensembles.exceptions import EnsembleError

logger = logging.getLogger(__name__)


@shared_task(bind=True, max_retries=1, default_retry_delay=60, time_limit=86400, soft_time_limit=86000)
def run_pipeline_task(self, config_payload, stages=None, command='pipeline'):
    """
    Run stages for a config given as ExperimentConfig.as_dict().
    stages: list of stage names, or None for the stages enabled in [analysis].
    """
    from .config import from_config_dict
    from .pipeline import enabled_stages, run_stages

    try:
        config = from_config_dict(config_payload)
        run, results = run_stages(config, stages or enabled_stages(config), command)
        return {
            'run_id': run.pk,
            'status': run.status,
            'stages': run.stages_completed,
            'failed_checks': run.failed_checks,
        }
    except EnsembleError:
        raise
    except Exception as e:
        logger.error(f"Pipeline task failed for {config_payload.get('preset')}: {e}")
        raise self.retry(exc=e)
