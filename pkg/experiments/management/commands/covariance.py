from ._base import StageCommand


class Command(StageCommand):
    help = 'Evaluate the limit covariance kernel, linear-statistic covariances and the mean correction'
    stages = ('covariance',)
