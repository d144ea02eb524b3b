from ._base import StageCommand


class Command(StageCommand):
    help = 'Tail frequencies of max |l_i|/N beyond given radii and the pseudodistance trend'
    stages = ('tails',)
