from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from ensembles.exceptions import MissingStageOutput
from experiments.stages import export_plot_data

from ._base import EXIT_IO, EXIT_MISSING_OUTPUT


class Command(BaseCommand):
    help = 'Write tidy plot CSVs (density, covariance heatmap, cumulant trends) from stage outputs'

    def add_arguments(self, parser):
        parser.add_argument('--out', help='Output directory of an earlier run (default: DBETA_OUT_DIR)')

    def handle(self, *args, **options):
        out = options.get('out') or settings.DBETA_OUT_DIR
        try:
            written = export_plot_data(out)
        except MissingStageOutput as e:
            raise CommandError(str(e), returncode=EXIT_MISSING_OUTPUT) from e
        except OSError as e:
            raise CommandError(str(e), returncode=EXIT_IO) from e
        for path in written:
            self.stdout.write(f"  {path}")
        self.stdout.write(self.style.SUCCESS(f"Done: {len(written)} plot file(s)"))
