import math

import numpy as np
from django.test import SimpleTestCase

from ensembles.exceptions import BoundaryError, ConfigurationError
from ensembles.lattice import enumerate_configs
from ensembles.weights import ModelPreset, build, log_weight_ratio, polynomial_data, split_fillings

MULTICUT = {'a_hat': [0.0, 1.5], 'b_hat': [1.0, 2.5], 'fillings': [0.5, 0.5]}
HEXAGON = {'A': 1.0, 'B': 1.5, 'C': 1.5}


def _preset(name, theta=1.0, **parameters):
    return ModelPreset(name=name, parameters=parameters, theta=theta)


class PresetTests(SimpleTestCase):

    def test_unknown_preset(self):
        with self.assertRaises(ConfigurationError):
            _preset('gaussian')

    def test_nonpositive_theta(self):
        with self.assertRaises(ConfigurationError):
            _preset('krawtchouk', theta=0.0, m=2.0)

    def test_krawtchouk_requires_m_above_one(self):
        with self.assertRaises(ConfigurationError):
            build(_preset('krawtchouk', m=0.8), 4)

    def test_multicut_overlapping_intervals(self):
        with self.assertRaises(ConfigurationError):
            build(_preset('multicut_krawtchouk', a_hat=[0.0, 0.5], b_hat=[1.0, 2.0], fillings=[0.5, 0.5]), 4)

    def test_convex_potential_must_be_convex(self):
        with self.assertRaises(ConfigurationError):
            build(_preset('convex_potential', coefficients=[0.0, 0.0, -1.0, 0.0, 1.0]), 4)

    def test_split_fillings_absorbs_remainder(self):
        self.assertEqual(split_fillings(7, [0.5, 0.5]), [4, 3])
        with self.assertRaises(ConfigurationError):
            split_fillings(1, [0.5, 0.5])


class KrawtchoukTests(SimpleTestCase):

    def test_binomial_weight(self):
        spec, model = build(_preset('krawtchouk', m=2.0), 3)
        self.assertEqual(model.M, 6)
        self.assertEqual(spec.intervals, ((0.0, 6.0),))
        x = np.arange(7.0)
        expected = [math.log(math.comb(6, int(k))) for k in x]
        np.testing.assert_allclose(model.log_weight(x), expected, rtol=1e-12, atol=1e-12)

    def test_weight_vanishes_outside_support(self):
        _, model = build(_preset('krawtchouk', m=2.0), 3)
        self.assertEqual(model.log_weight(np.array([-1.0, 7.0])).tolist(), [-np.inf, -np.inf])

    def test_correction_terms_are_exact_for_linear_ratios(self):
        N = 7
        _, model = build(_preset('krawtchouk', m=2.5), N)
        z = np.array([3.1 + 0.4j, -1.0 + 2.0j])
        for exact, limit, correction in (
            (model.phi_plus_N, model.phi_plus, model.varphi_plus_N),
            (model.phi_minus_N, model.phi_minus, model.varphi_minus_N),
        ):
            np.testing.assert_allclose(N * (exact(N * z) - limit(z)), correction(z), atol=1e-12)

    def test_ratio_below_the_lowest_site_raises(self):
        _, model = build(_preset('krawtchouk', m=2.0), 2)
        with self.assertRaises(BoundaryError):
            log_weight_ratio(model, 0.0)


class RatioConsistencyTests(SimpleTestCase):
    """w(x)/w(x-1) = phi_plus_N(x)/phi_minus_N(x) wherever both sites carry weight."""

    def assertRatiosMatch(self, preset, N):
        spec, model = build(preset, N)
        sites = np.unique(np.concatenate([c.as_array() for c in enumerate_configs(spec)]))
        weights = model.log_weight(sites)
        checked = 0
        for x, log_w in zip(sites, weights):
            below = model.log_weight(np.array([x - 1.0]))[0]
            if not (np.isfinite(log_w) and np.isfinite(below)):
                continue
            self.assertAlmostEqual(log_weight_ratio(model, x), log_w - below, places=9)
            checked += 1
        self.assertGreater(checked, 0)

    def test_krawtchouk_half_theta(self):
        self.assertRatiosMatch(_preset('krawtchouk', theta=0.5, m=2.0), 3)

    def test_multicut_krawtchouk(self):
        self.assertRatiosMatch(_preset('multicut_krawtchouk', **MULTICUT), 4)

    def test_hahn_hexagon(self):
        self.assertRatiosMatch(_preset('hahn_hexagon', **HEXAGON), 4)

    def test_zw_measure(self):
        self.assertRatiosMatch(_preset('zw_measure', z_inf=[1.0, 0.5], w_inf=[1.0, -0.3]), 2)


class LimitTests(SimpleTestCase):

    def test_hahn_corrections_are_order_one_over_N(self):
        N = 200
        _, model = build(_preset('hahn_hexagon', A=1.0, B=1.5, C=1.5), N)
        z = np.array([0.7 + 0.3j, 2.5 - 1.0j])
        remainder = N * (model.phi_plus_N(N * z) - model.phi_plus(z)) - model.varphi_plus_N(z)
        self.assertLess(np.max(np.abs(remainder)), 0.05)

    def test_multicut_spec(self):
        spec, model = build(_preset('multicut_krawtchouk', **MULTICUT), 4)
        self.assertEqual(spec.fillings, (2, 2))
        self.assertEqual(spec.intervals, ((0.0, 4.0), (6.0, 10.0)))
        self.assertEqual(model.support_hint, ((0.0, 1.0), (1.5, 2.5)))

    def test_truncated_presets_report_boundary_poles(self):
        spec, model = build(_preset('convex_potential', coefficients=[0.0, 0.0, 1.0]), 5)
        self.assertTrue(model.truncated)
        self.assertEqual(len(model.boundary_poles()), 2)
        lo, hi = spec.intervals[0]
        self.assertLessEqual(hi, model.truncation * 5 + 1e-9)
        self.assertGreaterEqual(lo, -model.truncation * 5 - 1.0)

    def test_polynomial_data(self):
        _, model = build(_preset('multicut_krawtchouk', **MULTICUT), 4)
        self.assertEqual(polynomial_data(model).degree, 2)
        _, convex = build(_preset('convex_potential', coefficients=[0.0, 0.0, 1.0]), 5)
        with self.assertRaises(ConfigurationError):
            polynomial_data(convex)
