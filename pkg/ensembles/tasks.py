import logging
from celery import shared_task

from .exceptions import EnsembleError

logger = logging.getLogger(__name__)


@shared_task(bind=True, max_retries=1, default_retry_delay=10, time_limit=86400, soft_time_limit=86000)
def run_chain_task(self, payload):
    """
    One Metropolis chain for one preset and N.
    payload: JSON dict built by mcmc.chain_payloads (preset, N, schedule, seed, chain_index).
    Returns the sampled offsets and step indices as plain lists.
    """
    from .mcmc import run_chain_job

    try:
        return run_chain_job(payload)
    except EnsembleError:
        raise
    except Exception as e:
        logger.error(f"Chain {payload.get('chain_index')} failed for N={payload.get('N')}: {e}")
        raise self.retry(exc=e)
