from ._base import StageCommand


class Command(StageCommand):
    help = 'Run Metropolis chains for every N and write the sample streams'
    stages = ('sample',)
