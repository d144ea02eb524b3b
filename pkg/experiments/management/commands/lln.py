from ._base import StageCommand


class Command(StageCommand):
    help = 'Law of large numbers check of polynomial statistics against the equilibrium measure'
    stages = ('lln',)
