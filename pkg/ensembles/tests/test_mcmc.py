import math

import numpy as np
from django.test import SimpleTestCase, override_settings

from ensembles.exact import build_exact
from ensembles.exceptions import ConfigurationError
from ensembles.lattice import enumerate_configs, lambdas_of, validate
from ensembles.mcmc import (
    MoveContext, chain_payloads, collect_chain, default_burn_in, log_mass_of, make_rng, move_log_ratio,
    new_state, propose_and_accept, run_chain, run_chains, transition_probability,
)
from ensembles.weights import ModelPreset, build


def _preset(m=2.0, theta=1.0):
    return ModelPreset(name='krawtchouk', parameters={'m': m}, theta=theta)


class MoveTests(SimpleTestCase):

    def test_single_particle_ratio_is_the_weight_ratio(self):
        spec, model = build(_preset(), 1)
        context = MoveContext(spec, model)
        lambdas = np.array([1])
        positions = spec.offsets + lambdas
        # binomial(2, 0) / binomial(2, 1)
        self.assertAlmostEqual(move_log_ratio(context, lambdas, positions, 0, -1), math.log(0.5), places=12)
        self.assertAlmostEqual(move_log_ratio(context, lambdas, positions, 0, 1), math.log(0.5), places=12)

    def test_moves_leaving_the_state_space_are_refused(self):
        spec, model = build(_preset(), 2)
        context = MoveContext(spec, model)
        lambdas = np.array([0, 0])
        positions = spec.offsets + lambdas
        self.assertIsNone(move_log_ratio(context, lambdas, positions, 0, -1))
        lambdas = np.array([2, 2])
        positions = spec.offsets + lambdas
        self.assertIsNone(move_log_ratio(context, lambdas, positions, 0, 1))

    def test_incremental_ratio_matches_full_mass(self):
        for theta in (0.5, 1.0, 2.0):
            spec, model = build(_preset(m=3.0, theta=theta), 3)
            context = MoveContext(spec, model)
            for config in enumerate_configs(spec):
                lambdas = lambdas_of(spec, config)
                positions = config.as_array()
                before = log_mass_of(spec, model, positions)
                for i in range(spec.N):
                    for direction in (-1, 1):
                        delta = move_log_ratio(context, lambdas, positions, i, direction)
                        if delta is None:
                            continue
                        moved = positions.copy()
                        moved[i] += direction
                        self.assertAlmostEqual(delta, log_mass_of(spec, model, moved) - before, places=9)

    def test_detailed_balance(self):
        for theta in (0.5, 1.0):
            spec, model = build(_preset(theta=theta), 2)
            ens = build_exact(spec, model)
            index = {tuple(row): p for row, p in zip(ens.positions, ens.probabilities)}
            lambdas = {tuple(row): lambdas_of(spec, c) for row, c in zip(ens.positions, enumerate_configs(spec))}
            for a, la in lambdas.items():
                for b, lb in lambdas.items():
                    if a == b:
                        continue
                    forward = index[a] * transition_probability(spec, model, la, lb)
                    backward = index[b] * transition_probability(spec, model, lb, la)
                    self.assertAlmostEqual(forward, backward, places=14)

    def test_transition_rows_sum_to_one(self):
        spec, model = build(_preset(theta=0.5), 2)
        configs = [lambdas_of(spec, c) for c in enumerate_configs(spec)]
        for la in configs:
            total = sum(transition_probability(spec, model, la, lb) for lb in configs)
            self.assertAlmostEqual(total, 1.0, places=12)


class ChainTests(SimpleTestCase):

    def test_same_seed_same_stream(self):
        spec, model = build(_preset(), 3)
        first = [c.positions for c in run_chain(spec, model, burn_in=5, samples=50, seed=42)]
        second = [c.positions for c in run_chain(spec, model, burn_in=5, samples=50, seed=42)]
        self.assertEqual(first, second)

    def test_samples_stay_in_the_state_space(self):
        spec, model = build(_preset(m=2.5, theta=0.5), 4)
        for config in run_chain(spec, model, burn_in=5, samples=200, seed=7):
            self.assertTrue(validate(spec, config))

    def test_chain_streams_are_independent(self):
        a = make_rng(5, 0).integers(1 << 30, size=4)
        b = make_rng(5, 1).integers(1 << 30, size=4)
        self.assertFalse(np.array_equal(a, b))

    def test_schedule_is_validated(self):
        spec, model = build(_preset(), 2)
        with self.assertRaises(ConfigurationError):
            collect_chain(spec, model, burn_in=0, samples=10, thinning=1, seed=0)

    def test_default_burn_in_is_quadratic_in_N(self):
        self.assertEqual(default_burn_in(1), 50)
        self.assertEqual(default_burn_in(10), 5000)

    def test_empirical_frequencies_match_binomial(self):
        spec, model = build(_preset(), 1)
        result = collect_chain(spec, model, burn_in=50, samples=20000, thinning=1, seed=2024)
        counts = np.bincount(result.lambdas[:, 0], minlength=3) / 20000
        np.testing.assert_allclose(counts, [0.25, 0.5, 0.25], atol=0.03)

    @override_settings(DBETA_RECOMPUTE_INTERVAL=7)
    def test_periodic_recompute_keeps_the_mass(self):
        spec, model = build(_preset(m=3.0, theta=0.5), 3)
        state = new_state(spec, model, make_rng(1))
        context = MoveContext(spec, model)
        for _ in range(200):
            propose_and_accept(state, spec, model, context)
        self.assertAlmostEqual(state.log_mass, log_mass_of(spec, model, state.positions), places=9)


@override_settings(CELERY_TASK_ALWAYS_EAGER=True)
class ChainDispatchTests(SimpleTestCase):

    def test_payloads_spawn_one_stream_per_chain(self):
        payloads = chain_payloads(_preset(), 3, samples=10, seed=9, chains=3)
        self.assertEqual([p['chain_index'] for p in payloads], [0, 1, 2])
        self.assertEqual({p['seed'] for p in payloads}, {9})

    def test_eager_chains_are_reproducible(self):
        first = run_chains(_preset(), 3, samples=20, burn_in=5, seed=3, chains=2, threads=1)
        second = run_chains(_preset(), 3, samples=20, burn_in=5, seed=3, chains=2, threads=1)
        self.assertEqual([r.chain_index for r in first], [0, 1])
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.lambdas, b.lambdas)
        self.assertFalse(np.array_equal(first[0].lambdas, first[1].lambdas))
