"""
Ledgered orchestration of stages. Stages run in a fixed order; a stage exception marks the
run failed and propagates, failed checks are counted and reported at the end.
"""
import logging

from django.utils import timezone

from .artifacts import write_manifest
from .models import ExperimentRun
from .stages import STAGES, StageContext, check_stage_name

logger = logging.getLogger(__name__)

STAGE_ORDER = ('verify_nekrasov', 'equilibrium', 'sample', 'covariance', 'clt', 'lln', 'tails')
ANALYSIS_STAGES = {
    'nekrasov_verify': 'verify_nekrasov',
    'equilibrium': 'equilibrium',
    'covariance': 'covariance',
    'clt': 'clt',
    'lln': 'lln',
    'tails': 'tails',
}
SAMPLING_STAGES = ('clt', 'lln', 'tails')


def enabled_stages(config):
    """Stages switched on in [analysis], plus sampling when a Monte-Carlo stage needs it."""
    wanted = {stage for toggle, stage in ANALYSIS_STAGES.items() if config.analysis.get(toggle)}
    if wanted & set(SAMPLING_STAGES):
        wanted.add('sample')
    return [stage for stage in STAGE_ORDER if stage in wanted]


def run_stages(config, stages, command):
    """
    Run the given stages in pipeline order under one ledger entry.
    Returns (run, results); stage exceptions are recorded and re-raised.
    """
    for name in stages:
        check_stage_name(name)
    stages = [s for s in STAGE_ORDER if s in set(stages)]
    run = ExperimentRun.objects.create(
        command=command, preset=config.preset, config_digest=config.digest(),
        out_dir=str(config.out_dir), status='running',
    )
    ctx = StageContext(config)
    results, errors, completed = [], [], []
    current = None
    logger.info(f"Run {run.pk}: {command} for {config.preset}, stages {', '.join(stages) or 'none'}")

    try:
        for name in stages:
            current = name
            logger.info(f"Stage {name} started")
            result = STAGES[name](ctx)
            results.append(result)
            completed.append(name)
            for check in result.failed:
                message = f"{name}: check {check} failed"
                logger.error(message)
                errors.append(message)
            run.stages_completed = completed
            run.save(update_fields=['stages_completed'])
        current = None
        write_manifest(config.out_dir, config, completed)

        run.failed_checks = sum(len(r.failed) for r in results)
        run.errors = errors
        run.status = 'completed'
        run.completed_at = timezone.now()
        run.save()
        logger.info(f"Run {run.pk} complete: {len(completed)} stage(s), {run.failed_checks} failed check(s)")

    except Exception as e:
        logger.error(f"Run {run.pk} failed in {current or 'manifest'}: {e}")
        run.status = 'failed'
        run.stages_completed = completed
        run.failed_checks = sum(len(r.failed) for r in results)
        run.errors = errors + [str(e)]
        run.completed_at = timezone.now()
        run.save()
        raise

    return run, results
