"""
Metropolis sampler on the lattice state space.

Single-site moves l_i -> l_i +- 1 with the exact one-step mass ratio: the pairwise factor for
a particle at x moving to x - 1 against a particle at r changes by

    P(l) / P(l^-) = y (y + 1 - theta) / ((y + 1)(y + theta)),   y = r - x,

and the weight by w(x)/w(x-1) = phi_plus_N(x)/phi_minus_N(x).
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from .exact import log_pair_factor
from .exceptions import ConfigurationError
from .lattice import ParticleConfig, initial_lambdas

logger = logging.getLogger(__name__)

RNG_IDENTITY = 'numpy.random.PCG64DXSM'
DRIFT_TOL = 1e-8


def make_rng(seed, chain_index=None):
    """PCG64DXSM generator; chain k uses child k of SeedSequence(seed)."""
    if chain_index is None:
        sequence = np.random.SeedSequence(int(seed))
    else:
        sequence = np.random.SeedSequence(int(seed), spawn_key=(int(chain_index),))
    return np.random.Generator(np.random.PCG64DXSM(sequence))


def pair_move_ratio(y, theta):
    """Pairwise mass ratio P(l)/P(l^-) when one particle moves from x to x-1; y = r - x."""
    y = np.asarray(y, dtype=np.float64)
    return y * (y + 1 - theta) / ((y + 1) * (y + theta))


def log_mass_of(spec, model, positions):
    positions = np.asarray(positions, dtype=np.float64)
    total = float(np.sum(model.log_weight(positions)))
    for i in range(spec.N - 1):
        total += float(np.sum(log_pair_factor(positions[i + 1:] - positions[i], spec.theta)))
    return total


@dataclass
class ChainState:
    lambdas: np.ndarray
    positions: np.ndarray
    log_mass: float
    rng: np.random.Generator
    step_count: int = 0
    accepted: int = 0

    @property
    def config(self):
        return ParticleConfig(tuple(self.positions))

    @property
    def rng_state(self):
        return self.rng.bit_generator.state


@dataclass
class MoveContext:
    """Per-chain caches: group boundaries and the site table of log(phi_plus_N/phi_minus_N)."""
    spec: object
    model: object
    caps: np.ndarray = field(init=False)
    first: np.ndarray = field(init=False)
    last: np.ndarray = field(init=False)
    site_log_ratio: dict = field(default_factory=dict)

    def __post_init__(self):
        self.caps = self.spec.lambda_caps
        first = np.zeros(self.spec.N, dtype=bool)
        last = np.zeros(self.spec.N, dtype=bool)
        for sl in self.spec.group_slices():
            first[sl.start] = True
            last[sl.stop - 1] = True
        self.first, self.last = first, last

    def weight_log_ratio(self, x):
        key = round(float(x), 9)
        if key not in self.site_log_ratio:
            plus = abs(complex(self.model.phi_plus_N(np.float64(x))))
            minus = abs(complex(self.model.phi_minus_N(np.float64(x))))
            if plus == 0 or minus == 0:
                value = -np.inf if plus == 0 else np.inf
            else:
                value = float(np.log(plus) - np.log(minus))
            self.site_log_ratio[key] = value
        return self.site_log_ratio[key]


def move_log_ratio(context, lambdas, positions, i, direction):
    """log P(new)/P(old) for moving particle i by direction, or None if the move leaves the state space."""
    new = lambdas[i] + direction
    if new < 0 or new > context.caps[i]:
        return None
    if direction < 0 and not context.first[i] and lambdas[i - 1] > new:
        return None
    if direction > 0 and not context.last[i] and lambdas[i + 1] < new:
        return None

    theta = context.spec.theta
    x = positions[i]
    others = np.delete(positions, i)
    if direction < 0:
        with np.errstate(divide='ignore', invalid='ignore'):
            pair = -np.sum(np.log(pair_move_ratio(others - x, theta)))
        delta = pair - context.weight_log_ratio(x)
    else:
        with np.errstate(divide='ignore', invalid='ignore'):
            pair = np.sum(np.log(pair_move_ratio(others - x - 1, theta)))
        delta = pair + context.weight_log_ratio(x + 1)
    if not np.isfinite(delta) and delta != -np.inf:
        return -np.inf
    return float(delta)


def new_state(spec, model, rng, lambdas=None):
    lambdas = initial_lambdas(spec) if lambdas is None else np.asarray(lambdas, dtype=np.int64).copy()
    positions = spec.offsets + lambdas
    log_mass = log_mass_of(spec, model, positions)
    if not np.isfinite(log_mass):
        raise ConfigurationError("starting configuration has zero mass; the weight vanishes inside the support")
    return ChainState(lambdas=lambdas, positions=positions, log_mass=log_mass, rng=rng)


def propose_and_accept(state, spec, model, context=None, recompute_interval=None):
    """One Metropolis step; returns the (mutated) state."""
    context = context or MoveContext(spec, model)
    rng = state.rng
    i = int(rng.integers(spec.N))
    direction = 1 if rng.integers(2) else -1
    delta = move_log_ratio(context, state.lambdas, state.positions, i, direction)
    if delta is not None and np.log(rng.random()) < delta:
        state.lambdas[i] += direction
        state.positions[i] += direction
        state.log_mass += delta
        state.accepted += 1
    state.step_count += 1

    interval = recompute_interval or settings.DBETA_RECOMPUTE_INTERVAL
    if state.step_count % interval == 0:
        fresh = log_mass_of(spec, model, state.positions)
        drift = abs(fresh - state.log_mass)
        if drift > DRIFT_TOL * max(1.0, abs(fresh)):
            logger.warning(f"log-mass drift {drift:.3e} after {state.step_count} steps")
        state.log_mass = fresh
    return state


def transition_probability(spec, model, lambdas_from, lambdas_to):
    """Exact one-step transition probability between two offset vectors."""
    a = np.asarray(lambdas_from, dtype=np.int64)
    b = np.asarray(lambdas_to, dtype=np.int64)
    context = MoveContext(spec, model)
    positions = spec.offsets + a

    def move_probability(i, direction):
        delta = move_log_ratio(context, a, positions, i, direction)
        if delta is None:
            return 0.0
        return min(1.0, float(np.exp(delta))) / (2 * spec.N)

    diff = b - a
    moved = np.nonzero(diff)[0]
    if moved.size == 0:
        leave = sum(move_probability(i, d) for i in range(spec.N) for d in (-1, 1))
        return 1.0 - leave
    if moved.size == 1 and abs(diff[moved[0]]) == 1:
        return move_probability(int(moved[0]), int(diff[moved[0]]))
    return 0.0


# ──────────────────────────────────────────────
# Chains
# ──────────────────────────────────────────────

def _check_schedule(burn_in, samples, thinning):
    if burn_in < 1 or thinning < 1 or samples < 1:
        raise ConfigurationError(
            f"burn_in, samples and thinning must be at least 1 (got {burn_in}, {samples}, {thinning})"
        )


def default_burn_in(N):
    """Burn-in in sweeps of N single-site steps: 50 N^2 sweeps, to be overridden at large N."""
    return 50 * N * N


def iterate_chain(spec, model, burn_in, samples, thinning, rng, recompute_interval=None):
    """Yield (step, state) after burn-in and then every `thinning` sweeps."""
    _check_schedule(burn_in, samples, thinning)
    context = MoveContext(spec, model)
    state = new_state(spec, model, rng)
    sweep = spec.N
    for _ in range(burn_in * sweep):
        propose_and_accept(state, spec, model, context, recompute_interval)
    report_every = max(1, samples // 10)
    for k in range(samples):
        for _ in range(thinning * sweep):
            propose_and_accept(state, spec, model, context, recompute_interval)
        if (k + 1) % report_every == 0:
            logger.info(
                f"  Chain progress: {k + 1}/{samples} samples, "
                f"acceptance {state.accepted / max(1, state.step_count):.3f}"
            )
        yield state.step_count, state


def run_chain(spec, model, burn_in=None, samples=1000, thinning=1, seed=0):
    """Stream of sampled configurations; bitwise reproducible given the seed."""
    burn_in = default_burn_in(spec.N) if burn_in is None else burn_in
    for _, state in iterate_chain(spec, model, burn_in, samples, thinning, make_rng(seed)):
        yield state.config


@dataclass
class ChainResult:
    chain_index: int
    steps: np.ndarray
    lambdas: np.ndarray
    acceptance_rate: float
    seed: int

    def positions(self, spec):
        return spec.offsets[None, :] + self.lambdas

    def as_payload(self):
        return {
            'chain_index': self.chain_index,
            'steps': self.steps.tolist(),
            'lambdas': self.lambdas.tolist(),
            'acceptance_rate': self.acceptance_rate,
            'seed': self.seed,
        }

    @classmethod
    def from_payload(cls, payload):
        return cls(
            chain_index=payload['chain_index'],
            steps=np.asarray(payload['steps'], dtype=np.int64),
            lambdas=np.asarray(payload['lambdas'], dtype=np.int64),
            acceptance_rate=payload['acceptance_rate'],
            seed=payload['seed'],
        )


def collect_chain(spec, model, burn_in, samples, thinning, seed, chain_index=0, recompute_interval=None):
    rng = make_rng(seed, chain_index)
    steps = np.empty(samples, dtype=np.int64)
    lambdas = np.empty((samples, spec.N), dtype=np.int64)
    last = None
    for k, (step, state) in enumerate(iterate_chain(spec, model, burn_in, samples, thinning, rng, recompute_interval)):
        steps[k] = step
        lambdas[k] = state.lambdas
        last = state
    return ChainResult(
        chain_index=chain_index,
        steps=steps,
        lambdas=lambdas,
        acceptance_rate=last.accepted / max(1, last.step_count),
        seed=int(seed),
    )


def run_chain_job(payload):
    """Pure chain job: JSON payload in, JSON payload out. Used by Celery tasks and process pools."""
    from .weights import ModelPreset, build

    preset = ModelPreset(**payload['preset'])
    spec, model = build(preset, payload['N'])
    burn_in = payload.get('burn_in') or default_burn_in(spec.N)
    result = collect_chain(
        spec, model,
        burn_in=burn_in,
        samples=payload['samples'],
        thinning=payload.get('thinning', 1),
        seed=payload['seed'],
        chain_index=payload['chain_index'],
        recompute_interval=payload.get('recompute_interval'),
    )
    return result.as_payload()


def chain_payloads(preset, N, samples, burn_in=None, thinning=1, seed=0, chains=1):
    return [
        {
            'preset': {'name': preset.name, 'parameters': dict(preset.parameters), 'theta': preset.theta},
            'N': int(N),
            'burn_in': burn_in,
            'samples': int(samples),
            'thinning': int(thinning),
            'seed': int(seed),
            'chain_index': k,
            'recompute_interval': settings.DBETA_RECOMPUTE_INTERVAL,
        }
        for k in range(chains)
    ]


def run_chains(preset, N, samples, burn_in=None, thinning=1, seed=0, chains=1, threads=None):
    """
    Independent chains for one N, returned in chain-index order.

    Dispatched through Celery; when tasks run eagerly and threads > 1 the same job runs in a
    process pool instead.
    """
    from celery import group
    from .tasks import run_chain_task

    threads = settings.DBETA_THREADS if threads is None else threads
    payloads = chain_payloads(preset, N, samples, burn_in, thinning, seed, chains)
    logger.info(f"Running {chains} chain(s) for {preset.name} at N={N} ({samples} samples each)")

    if settings.CELERY_TASK_ALWAYS_EAGER:
        if threads > 1 and chains > 1:
            with ProcessPoolExecutor(max_workers=min(threads, chains)) as pool:
                outputs = list(pool.map(run_chain_job, payloads))
        else:
            outputs = [run_chain_job(p) for p in payloads]
    else:
        outputs = group(run_chain_task.s(p) for p in payloads).apply_async().get()

    results = [ChainResult.from_payload(out) for out in outputs]
    return sorted(results, key=lambda r: r.chain_index)
