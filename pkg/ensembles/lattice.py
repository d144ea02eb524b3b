"""
Multi-cut lattice state spaces.

A configuration is split into k groups, one per interval [a_j, b_j]. Inside a group
consecutive gaps lie in {theta, theta+1, ...}; the lowest admissible site of group j is
base_j = a_j + frac(theta) and the highest is b_j. Every particle is stored as an integer
offset lambda_i, so that

    l_i = base_j + lambda_i + theta * rank_i,    0 <= lambda_1 <= ... <= lambda_n <= lambda_max_j

and all membership tests are integer tests.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from .exceptions import ConfigurationError, EnumerationLimitError

logger = logging.getLogger(__name__)

INTEGER_TOL = 1e-9


def _as_integer(value, tol=INTEGER_TOL):
    """Return value as int if it is an integer up to tol, else None."""
    nearest = round(value)
    if abs(value - nearest) <= tol * max(1.0, abs(value)):
        return int(nearest)
    return None


def frac(theta):
    return theta - math.floor(theta)


@dataclass(frozen=True)
class StateSpaceSpec:
    theta: float
    N: int
    intervals: tuple
    fillings: tuple
    lambda_max: tuple = field(init=False, repr=False)

    def __post_init__(self):
        intervals = tuple((float(a), float(b)) for a, b in self.intervals)
        fillings = tuple(int(n) for n in self.fillings)
        object.__setattr__(self, 'intervals', intervals)
        object.__setattr__(self, 'fillings', fillings)

        if not self.theta > 0:
            raise ConfigurationError(f"theta must be positive, got {self.theta}")
        if self.N < 1:
            raise ConfigurationError(f"N must be at least 1, got {self.N}")
        if len(intervals) == 0 or len(intervals) != len(fillings):
            raise ConfigurationError("intervals and fillings must be nonempty and of equal length")
        if any(n < 1 for n in fillings):
            raise ConfigurationError(f"fillings must be positive, got {fillings}")
        if sum(fillings) != self.N:
            raise ConfigurationError(f"fillings {fillings} do not sum to N={self.N}")
        for (_, b), (a_next, _) in zip(intervals, intervals[1:]):
            if b + self.theta > a_next + INTEGER_TOL:
                raise ConfigurationError(
                    f"intervals too close: b={b} + theta={self.theta} exceeds next a={a_next}"
                )

        lambda_max = []
        for (a, b), n in zip(intervals, fillings):
            slack = _as_integer(b - self.theta * n - a)
            if slack is None:
                raise ConfigurationError(
                    f"b - theta*n - a must be an integer on [{a}, {b}] with n={n}"
                )
            top = slack + math.floor(self.theta)
            if top < 0:
                raise ConfigurationError(
                    f"interval [{a}, {b}] cannot hold {n} particles at theta={self.theta}"
                )
            lambda_max.append(top)
        object.__setattr__(self, 'lambda_max', tuple(lambda_max))

    @property
    def k(self):
        return len(self.intervals)

    @property
    def bases(self):
        shift = frac(self.theta)
        return tuple(a + shift for a, _ in self.intervals)

    def group_slices(self):
        start = 0
        for n in self.fillings:
            yield slice(start, start + n)
            start += n

    @property
    def group_index(self):
        return np.repeat(np.arange(self.k), self.fillings)

    @property
    def offsets(self):
        """base_j + theta * rank for every particle; positions are offsets + lambdas."""
        parts = [base + self.theta * np.arange(n) for base, n in zip(self.bases, self.fillings)]
        return np.concatenate(parts)

    @property
    def lambda_caps(self):
        return np.repeat(np.asarray(self.lambda_max, dtype=np.int64), self.fillings)

    def translate(self, shift):
        return StateSpaceSpec(
            theta=self.theta,
            N=self.N,
            intervals=tuple((a + shift, b + shift) for a, b in self.intervals),
            fillings=self.fillings,
        )


@dataclass(frozen=True)
class ParticleConfig:
    positions: tuple

    def __post_init__(self):
        object.__setattr__(self, 'positions', tuple(float(x) for x in self.positions))

    def __len__(self):
        return len(self.positions)

    @classmethod
    def from_lambdas(cls, spec, lambdas):
        return cls(tuple(spec.offsets + np.asarray(lambdas, dtype=np.float64)))

    def as_array(self):
        return np.asarray(self.positions, dtype=np.float64)


def lambdas_of(spec, config):
    """Integer offsets of a configuration, or None if it is not in the state space."""
    if len(config) != spec.N:
        raise ConfigurationError(f"configuration has {len(config)} positions, expected N={spec.N}")
    positions = config.as_array()
    if np.any(np.diff(positions) <= 0):
        return None
    raw = positions - spec.offsets
    lambdas = np.rint(raw)
    if np.any(np.abs(raw - lambdas) > INTEGER_TOL * np.maximum(1.0, np.abs(raw))):
        return None
    lambdas = lambdas.astype(np.int64)
    if np.any(lambdas < 0) or np.any(lambdas > spec.lambda_caps):
        return None
    for sl in spec.group_slices():
        if np.any(np.diff(lambdas[sl]) < 0):
            return None
    return lambdas


def validate(spec, config):
    """True iff config lies in the lattice state space of spec."""
    return lambdas_of(spec, config) is not None


def cardinality(spec):
    return math.prod(math.comb(top + n, n) for top, n in zip(spec.lambda_max, spec.fillings))


def enumerate_configs(spec, cap=None):
    """Yield every configuration once, in lexicographic order of positions."""
    cap = settings.DBETA_ENUMERATION_CAP if cap is None else cap
    size = cardinality(spec)
    if size > cap:
        raise EnumerationLimitError(size, cap)
    logger.debug(f"Enumerating {size} configurations (N={spec.N}, theta={spec.theta})")

    per_group = [
        itertools.combinations_with_replacement(range(top + 1), n)
        for top, n in zip(spec.lambda_max, spec.fillings)
    ]
    offsets = spec.offsets
    for parts in itertools.product(*per_group):
        lambdas = np.fromiter(itertools.chain.from_iterable(parts), dtype=np.float64, count=spec.N)
        yield ParticleConfig(tuple(offsets + lambdas))


def initial_lambdas(spec):
    """Evenly spread valid offsets, used to start chains."""
    parts = []
    for top, n in zip(spec.lambda_max, spec.fillings):
        if n == 1:
            parts.append(np.array([top // 2], dtype=np.int64))
        else:
            parts.append(np.floor(np.arange(n) * top / (n - 1)).astype(np.int64))
    return np.concatenate(parts)


def initial_config(spec):
    return ParticleConfig.from_lambdas(spec, initial_lambdas(spec))
