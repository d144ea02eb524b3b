from ._base import StageCommand


class Command(StageCommand):
    help = 'Solve for the equilibrium measure and write the density CSV and band report'
    stages = ('equilibrium',)
