import math

import numpy as np
from django.test import SimpleTestCase

from ensembles.equilibrium import EquilibriumMeasure, build_grid
from ensembles.exact import build_exact, joint_cumulant
from ensembles.exceptions import ConfigurationError, InsufficientDataError
from ensembles.fluctuations import (
    CellMeasure, LinearStatSample, batch_means_se, collect_samples, decreasing_with_slack,
    effective_sample_size, estimate_cumulants, fourier_pseudodistance, gaussianity_report, lln_check,
    log_energy, pseudodistance, pseudodistance_trend, tail_check,
)
from ensembles.mcmc import collect_chain
from ensembles.weights import ModelPreset, build


def _scalar_sample(values):
    values = np.asarray(values, dtype=np.float64)
    return LinearStatSample(
        N=1, positions=np.zeros((values.size, 1)), polynomials=((0.0, 1.0),),
        linear=values[:, None], stieltjes=np.zeros((values.size, 0), dtype=complex),
    )


def _uniform_measure(cells=100):
    """Density 1/2 on [0, 2]: the m = 2 binomial limit."""
    grid = build_grid(((0.0, 2.0),), cells)
    return EquilibriumMeasure(
        grid=grid, density=np.full(grid.size, 0.5), fillings=(1.0,), lagrange_constants=(0.0,),
        theta=1.0, model=None,
    )


def _spread_sample(N, copies=30):
    row = 2.0 * np.arange(N) + 0.5
    return collect_samples(np.tile(row, (copies, 1)), N)


class SampleTests(SimpleTestCase):

    def test_observables(self):
        positions = np.array([[0.0, 2.0], [1.0, 3.0]])
        sample = collect_samples(positions, 2, polynomials=[(0.0, 1.0), (1.0,)], points=[4.0])
        np.testing.assert_allclose(sample.column('poly:0'), [1.0, 2.0])
        np.testing.assert_allclose(sample.column('poly:1'), [2.0, 2.0])
        # N G_N(4) = sum 1 / (4 - l / N)
        np.testing.assert_allclose(sample.column('G:0'), [1 / 4 + 1 / 3, 1 / 3.5 + 1 / 2.5])
        self.assertEqual(sample.names, ['poly:0', 'poly:1', 'G:0'])

    def test_shape_is_checked(self):
        with self.assertRaises(ConfigurationError):
            collect_samples(np.zeros((4, 3)), 2)

    def test_unknown_observable(self):
        sample = collect_samples(np.zeros((2, 1)), 1, polynomials=[(1.0,)])
        with self.assertRaises(ConfigurationError):
            sample.column('poly:3')
        with self.assertRaises(ConfigurationError):
            sample.column('moment')


class ErrorBarTests(SimpleTestCase):

    def test_constant_series_has_no_error(self):
        self.assertEqual(batch_means_se(np.full(1000, 3.0), 50), 0.0)

    def test_iid_standard_error(self):
        rng = np.random.default_rng(1)
        se = batch_means_se(rng.normal(size=10000), 50)
        self.assertGreater(se, 0.006)
        self.assertLess(se, 0.014)

    def test_too_few_samples_for_the_batches(self):
        with self.assertRaises(InsufficientDataError):
            batch_means_se(np.ones(10), 50)

    def test_effective_sample_size(self):
        rng = np.random.default_rng(2)
        n = 5000
        iid = rng.normal(size=n)
        ess = effective_sample_size(iid)
        self.assertGreater(ess, 0.6 * n)
        self.assertLess(ess, 1.5 * n)

        noise = rng.normal(size=n)
        ar = np.empty(n)
        ar[0] = noise[0]
        for t in range(1, n):
            ar[t] = 0.9 * ar[t - 1] + noise[t]
        self.assertLess(effective_sample_size(ar), n / 5)


class CumulantEstimateTests(SimpleTestCase):

    def test_gaussian_cumulants(self):
        rng = np.random.default_rng(4)
        sample = _scalar_sample(rng.normal(0.0, math.sqrt(2.0), size=20000))
        second = estimate_cumulants(sample, ['poly:0'], order=2)
        self.assertLess(abs(second.value - 2.0), 4 * second.standard_error)
        for k in (3, 4):
            estimate = estimate_cumulants(sample, ['poly:0'], order=k)
            self.assertLess(abs(estimate.value), 4 * estimate.standard_error)
        self.assertEqual(second.as_dict()['observables'], ['poly:0', 'poly:0'])

    def test_too_few_samples(self):
        sample = _scalar_sample(np.arange(500.0))
        with self.assertRaises(InsufficientDataError):
            estimate_cumulants(sample, ['poly:0'], order=2)

    def test_too_few_batches(self):
        sample = _scalar_sample(np.arange(5000.0))
        with self.assertRaises(InsufficientDataError):
            estimate_cumulants(sample, ['poly:0'], order=2, batches=10)

    def test_order_range(self):
        sample = _scalar_sample(np.arange(5000.0))
        with self.assertRaises(ConfigurationError):
            estimate_cumulants(sample, ['poly:0'], order=5)

    def test_chain_variance_matches_exact_enumeration(self):
        spec, model = build(ModelPreset(name='krawtchouk', parameters={'m': 2.0}), 1)
        exact = joint_cumulant(build_exact(spec, model), [lambda row: row[0], lambda row: row[0]])
        self.assertAlmostEqual(exact.real, 0.5, places=12)

        result = collect_chain(spec, model, burn_in=100, samples=20000, thinning=1, seed=31)
        sample = collect_samples(result.positions(spec), 1, polynomials=[(0.0, 1.0)])
        estimate = estimate_cumulants(sample, ['poly:0'], order=2)
        self.assertLess(abs(estimate.value - exact.real), 5 * estimate.standard_error + 0.01)


class TrendTests(SimpleTestCase):

    def test_decreasing_with_slack(self):
        self.assertTrue(decreasing_with_slack([3.0, 2.0, 2.05], [0.1, 0.1, 0.1]))
        self.assertFalse(decreasing_with_slack([1.0, 2.0], [0.1, 0.1]))

    def test_gaussianity_report(self):
        def rows(third, fourth):
            out = []
            for N, a, b in zip((10, 20, 40), third, fourth):
                out.append({'N': N, 'cumulant_order': 3, 'value': a, 'stderr': 0.01})
                out.append({'N': N, 'cumulant_order': 4, 'value': b, 'stderr': 0.01})
            return out

        self.assertTrue(gaussianity_report(rows([0.3, 0.2, 0.1], [0.5, 0.3, 0.2]))['passed'])
        report = gaussianity_report(rows([0.1, 0.2, 0.4], [0.5, 0.3, 0.2]))
        self.assertFalse(report['passed'])
        self.assertFalse(report['order_3']['decreasing'])

    def test_lln_gap_shrinks(self):
        samples = {N: _spread_sample(N) for N in (10, 40, 160)}
        report = lln_check(samples, _uniform_measure(), lambda x: x)
        self.assertTrue(report['decreasing'])
        for row in report['rows']:
            self.assertAlmostEqual(row['reference'], 1.0, places=10)
            self.assertAlmostEqual(row['mean_gap'], 0.5 / row['N'], places=10)

    def test_tail_frequencies(self):
        def sample(N, extremes):
            rows = np.zeros((len(extremes), N))
            rows[:, -1] = extremes
            return collect_samples(rows, N)

        samples = {10: sample(10, [20.0] * 5 + [5.0] * 5), 20: sample(20, [40.0] * 10)}
        report = tail_check(samples, radii=[1.0, 50.0])
        self.assertEqual(len(report['rows']), 4)
        self.assertEqual([r['exceedances'] for r in report['rows'] if r['D'] == 1.0], [5, 10])
        self.assertFalse(report['decaying']['1.0'])
        self.assertTrue(report['decaying']['50.0'])


class PseudodistanceTests(SimpleTestCase):

    def test_log_energy_of_uniform_measures(self):
        self.assertAlmostEqual(log_energy(CellMeasure.from_density([0.0, 1.0], [1.0])), -1.5, places=12)
        self.assertAlmostEqual(
            log_energy(CellMeasure.from_density([0.0, 2.0], [0.5])), math.log(2.0) - 1.5, places=12,
        )

    def test_uniform_pair(self):
        nu = CellMeasure.from_density([0.0, 1.0], [1.0])
        rho = CellMeasure.from_density([0.0, 2.0], [0.5])
        self.assertAlmostEqual(pseudodistance(nu, rho), math.sqrt(math.log(2.0)), places=10)
        self.assertAlmostEqual(fourier_pseudodistance(nu, rho), math.sqrt(math.log(2.0)), delta=1e-3)

    def test_distance_to_itself(self):
        rho = CellMeasure.from_equilibrium(_uniform_measure())
        self.assertAlmostEqual(pseudodistance(rho, rho), 0.0, places=6)

    def test_evenly_spread_atoms_approach_the_density(self):
        report = pseudodistance_trend({N: _spread_sample(N, copies=2) for N in (10, 40, 160)}, _uniform_measure())
        self.assertTrue(report['decreasing'])
        self.assertEqual([r['samples'] for r in report['rows']], [2, 2, 2])
