"""Shared options and exit-code mapping of the stage commands."""
from django.core.management.base import BaseCommand, CommandError

from ensembles.exceptions import (
    AssumptionViolation, BoundaryError, ConfigurationError, ContourError, ContractViolation, DomainError,
    EnumerationLimitError, EvaluationError, InsufficientDataError, MissingStageOutput, SolverError,
    VerificationFailure,
)
from experiments.config import config_from_options
from experiments.pipeline import run_stages

EXIT_VERIFICATION = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_ENUMERATION = 5
EXIT_MISSING_OUTPUT = 6

NUMERICAL_ERRORS = (
    SolverError, AssumptionViolation, ContourError, ContractViolation, EvaluationError, DomainError,
    InsufficientDataError, BoundaryError,
)


def exit_code_for(exc):
    if isinstance(exc, VerificationFailure):
        return EXIT_VERIFICATION
    if isinstance(exc, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(exc, EnumerationLimitError):
        return EXIT_ENUMERATION
    if isinstance(exc, MissingStageOutput):
        return EXIT_MISSING_OUTPUT
    if isinstance(exc, NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return None


class StageCommand(BaseCommand):
    stages = ()

    def add_arguments(self, parser):
        parser.add_argument('--config', help='TOML experiment file or a manifest.json from an earlier run')
        parser.add_argument('--seed', type=int, help='Base seed (unsigned 64-bit)')
        parser.add_argument('--threads', type=int, help='Worker processes for independent chains')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--preset', help='Model preset')
        parser.add_argument('--theta', type=float, help='theta = beta/2')
        parser.add_argument('--N', help='Comma-separated particle numbers, e.g. 50,100,200')
        parser.add_argument('--m', type=float, help='Krawtchouk parameter m')
        parser.add_argument('--param', action='append', help='Preset parameter key=value (repeatable)')
        parser.add_argument('--samples', type=int, help='Samples per chain')
        parser.add_argument('--burn-in', dest='burn_in', type=int, help='Burn-in sweeps')
        parser.add_argument('--thinning', type=int, help='Sweeps between samples')
        parser.add_argument('--chains', type=int, help='Independent chains per N')

    def stages_for(self, config):
        return list(self.stages)

    def handle(self, *args, **options):
        try:
            config = config_from_options(options)
            stages = self.stages_for(config)
            self.stdout.write(f"{config.preset}: N={','.join(map(str, config.N))}, stages {', '.join(stages)}")
            run, results = run_stages(config, stages, self.command_name)
        except Exception as e:
            code = exit_code_for(e)
            if code is None:
                raise
            raise CommandError(str(e), returncode=code) from e

        for result in results:
            status = self.style.SUCCESS('ok') if not result.failed else self.style.ERROR('FAILED')
            self.stdout.write(f"  {result.name}: {status} ({len(result.checks)} check(s))")
        if run.failed_checks:
            raise CommandError(
                f"{run.failed_checks} verification check(s) failed: {'; '.join(run.errors)}",
                returncode=EXIT_VERIFICATION,
            )
        self.stdout.write(self.style.SUCCESS(f"Done: run {run.pk}, outputs in {config.out_dir}"))

    @property
    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]
