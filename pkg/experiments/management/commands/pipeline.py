from experiments.pipeline import enabled_stages

from ._base import StageCommand


class Command(StageCommand):
    help = 'Run every stage enabled in the [analysis] section of the config'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--stages',
            help='Comma-separated stages to run instead of the [analysis] toggles',
        )

    def handle(self, *args, **options):
        self.requested = options.get('stages')
        return super().handle(*args, **options)

    def stages_for(self, config):
        if self.requested:
            return [s.strip().replace('-', '_') for s in self.requested.split(',') if s.strip()]
        return enabled_stages(config)
