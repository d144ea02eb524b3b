from ._base import StageCommand


class Command(StageCommand):
    help = 'Check that R_N has no poles on the lattice by exact enumeration (small N only)'
    stages = ('verify_nekrasov',)
