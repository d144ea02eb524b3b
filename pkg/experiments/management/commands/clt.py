from ._base import StageCommand


class Command(StageCommand):
    help = 'Cumulant trends of N G_N and linear statistics across N, with kernel comparison'
    stages = ('clt',)
