import math

import numpy as np
from django.test import SimpleTestCase
from scipy.integrate import trapezoid

from ensembles.equilibrium import (
    band_report, boundary_values, build_grid, density_at, integrate, krawtchouk_density,
    krawtchouk_reference_error, log_kernel_matrix, refine_grid, solve_equilibrium, spectral_data, stieltjes,
)
from ensembles.exceptions import ConfigurationError, EvaluationError
from ensembles.weights import ModelPreset, build


def _model(name='krawtchouk', N=100, theta=1.0, **parameters):
    _, model = build(ModelPreset(name=name, parameters=parameters, theta=theta), N)
    return model


class GridTests(SimpleTestCase):

    def test_log_kernel_is_symmetric_and_matches_the_unit_square(self):
        grid = build_grid(((0.0, 1.0),), 16)
        K = log_kernel_matrix(grid)
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        # iint_{[0,1]^2} ln|x - y| = -3/2
        self.assertAlmostEqual(float(K.sum()), -1.5, places=10)

    def test_grid_too_small(self):
        with self.assertRaises(ConfigurationError):
            build_grid(((0.0, 1.0), (2.0, 3.0)), 10)

    def test_refinement_is_graded_towards_the_edge(self):
        grid = build_grid(((0.0, 1.0),), 10)
        fine, owner = refine_grid(grid, [0.55], depth=32)
        # 32 pieces in the edge cell, then 16, 11, 8, 7 on both sides and 6 in the first cell
        self.assertEqual(fine.size, 122)
        self.assertEqual(int(np.sum(owner == 5)), 32)
        self.assertEqual(int(np.sum(owner == 0)), 6)
        np.testing.assert_allclose(fine.hi[:-1], fine.lo[1:], atol=1e-15)
        self.assertAlmostEqual(float(fine.widths.sum()), 1.0, places=14)
        self.assertEqual(fine.lo[0], 0.0)
        self.assertEqual(fine.hi[-1], 1.0)

    def test_refined_kernel_still_integrates_the_unit_square(self):
        fine, _ = refine_grid(build_grid(((0.0, 1.0),), 12), [0.3])
        self.assertAlmostEqual(float(log_kernel_matrix(fine).sum()), -1.5, places=9)


class KrawtchoukEquilibriumTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.flat_model = _model(m=2.0)
        cls.flat = solve_equilibrium(cls.flat_model, grid_size=400)
        cls.model = _model(m=3.0)
        cls.measure = solve_equilibrium(cls.model, grid_size=600)
        cls.spectral = spectral_data(cls.measure, cls.model)

    def test_total_mass(self):
        for measure in (self.flat, self.measure):
            self.assertAlmostEqual(float(np.sum(measure.density * measure.grid.widths)), 1.0, places=8)

    def test_density_respects_the_cap(self):
        self.assertGreaterEqual(float(self.measure.density.min()), -1e-12)
        self.assertLessEqual(float(self.measure.density.max()), 1.0 + 1e-12)

    def test_m_equal_two_is_uniform(self):
        x = self.flat.grid.midpoints
        interior = (x > 0.1) & (x < 1.9)
        np.testing.assert_allclose(self.flat.density[interior], 0.5, atol=1e-2)

    def test_closed_form_density(self):
        x = self.measure.grid.midpoints
        interior = np.abs(x - 1.5) < 1.2
        reference = krawtchouk_density(3.0, x[interior])
        np.testing.assert_allclose(self.measure.density[interior], reference, atol=2e-2)

    def test_closed_form_density_has_unit_mass(self):
        x = np.linspace(0.0, 3.0, 300001)
        mass = trapezoid(krawtchouk_density(3.0, x), x)
        self.assertAlmostEqual(mass, 1.0, places=3)

    def test_single_band(self):
        self.assertEqual(self.measure.band_counts, [1])

    def test_band_endpoints(self):
        (alpha, beta), = self.spectral.endpoints
        self.assertAlmostEqual(alpha, 1.5 - math.sqrt(2.0), delta=2e-3)
        self.assertAlmostEqual(beta, 1.5 + math.sqrt(2.0), delta=2e-3)

    def test_R_mu_is_the_constant_m_minus_two_theta(self):
        z = np.array([5.0 + 1.0j, -2.0 + 0.5j, 1.5 + 3.0j])
        np.testing.assert_allclose(self.spectral.R_mu(z), np.ones(3), atol=1e-6)

    def test_H_does_not_vanish(self):
        self.assertGreater(self.spectral.h_margin, 0.0)

    def test_band_identity(self):
        grid = self.measure.grid
        x = grid.midpoints[grid.locate(np.array([1.0, 2.0]))]
        upper = boundary_values(self.measure, x, side=1)
        lower = boundary_values(self.measure, x, side=-1)
        np.testing.assert_allclose(np.real(upper + lower), self.model.potential_derivative(x), atol=2e-2)
        np.testing.assert_allclose(np.imag(upper - lower) / (-2 * np.pi), density_at(self.measure, x), atol=1e-12)

    def test_stieltjes_far_field(self):
        z = 1.0e4 + 10.0j
        mean = integrate(self.measure, lambda x: x)
        self.assertAlmostEqual(abs(z * stieltjes(self.measure, z) - 1 - mean / z), 0.0, places=6)

    def test_stieltjes_refuses_the_support(self):
        with self.assertRaises(EvaluationError):
            stieltjes(self.measure, 1.5 + 1e-4j)

    def test_band_report(self):
        report = band_report(self.measure, self.spectral)
        self.assertEqual(report['preset'], 'krawtchouk')
        self.assertEqual(len(report['endpoints']), 1)
        self.assertIn('R_mu_coefficients', report)


class SaturationTests(SimpleTestCase):

    def test_small_m_saturates_near_the_walls(self):
        model = _model(m=1.5)
        measure = solve_equilibrium(model, grid_size=600)
        self.assertTrue(measure.saturated)
        self.assertEqual(measure.band_counts, [1])

    def test_fillings_must_sum_to_one(self):
        with self.assertRaises(ConfigurationError):
            solve_equilibrium(_model(m=2.0), fillings=(0.5,), grid_size=200)


class MulticutEquilibriumTests(SimpleTestCase):

    def test_interval_masses_follow_the_fillings(self):
        model = _model(
            name='multicut_krawtchouk', a_hat=[0.0, 1.5], b_hat=[1.0, 2.5], fillings=[0.3, 0.7],
        )
        measure = solve_equilibrium(model, grid_size=300)
        masses = np.bincount(measure.grid.interval, weights=measure.density * measure.grid.widths)
        np.testing.assert_allclose(masses, [0.3, 0.7], atol=1e-8)


class ReferenceDensityTests(SimpleTestCase):
    """Krawtchouk densities on the default 2000-cell grid against the closed form."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.measures = {m: solve_equilibrium(_model(m=m), grid_size=2000) for m in (1.5, 2.0, 3.0)}

    def test_band_sup_error(self):
        for m, measure in self.measures.items():
            with self.subTest(m=m):
                self.assertLess(krawtchouk_reference_error(measure, m)['band_sup_error'], 1e-3)

    def test_saturated_plateau(self):
        self.assertTrue(self.measures[1.5].saturated)
        self.assertFalse(self.measures[3.0].saturated)

    def test_refinement_only_at_transitions(self):
        self.assertNotIn('refined_edges', self.measures[2.0].iterations)
        self.assertEqual(self.measures[2.0].grid.size, 2000)

        measure = self.measures[3.0]
        alpha, beta = measure.iterations['refined_edges']
        self.assertAlmostEqual(alpha, 1.5 - math.sqrt(2.0), delta=5e-3)
        self.assertAlmostEqual(beta, 1.5 + math.sqrt(2.0), delta=5e-3)
        self.assertGreater(measure.grid.size, 2000)
        self.assertLess(float(measure.grid.widths.min()), float(measure.grid.widths.max()) / 16)
        self.assertAlmostEqual(float(np.sum(measure.density * measure.grid.widths)), 1.0, places=8)
