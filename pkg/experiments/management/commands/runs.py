from django.core.management.base import BaseCommand

from experiments.models import ExperimentRun


class Command(BaseCommand):
    help = 'List recent runs from the ledger'

    def add_arguments(self, parser):
        parser.add_argument('--limit', type=int, default=20, help='Number of runs to show (default: 20)')

    def handle(self, *args, **options):
        runs = ExperimentRun.objects.all()[:options['limit']]
        if not runs:
            self.stdout.write("No runs recorded.")
            return
        for run in runs:
            finished = run.completed_at.strftime('%Y-%m-%d %H:%M') if run.completed_at else '-'
            self.stdout.write(
                f"{run.pk:>5}  {run.status:<9}  {run.command:<16} {run.preset:<20} "
                f"stages={','.join(run.stages_completed) or '-'}  failed_checks={run.failed_checks}  "
                f"finished={finished}  out={run.out_dir}"
            )
