from fractions import Fraction

import numpy as np
from django.test import SimpleTestCase
from scipy.special import logsumexp

from ensembles.exact import (
    _rational_pair, build_exact, build_exact_q, build_exact_rational, closed_form_krawtchouk_Z,
    cumulant_from_moments, exact_rational_residues, joint_cumulant, log_pair_factor, mean_stieltjes, nekrasov_R,
    nekrasov_R_q, polynomial_fit_residual, rational_residues, residue_report, set_partitions, stieltjes_covariance,
)
from ensembles.exceptions import ConfigurationError
from ensembles.weights import ModelPreset, build


def _krawtchouk(N, m=2.0, theta=1.0):
    return build(ModelPreset(name='krawtchouk', parameters={'m': m}, theta=theta), N)


class EnsembleTests(SimpleTestCase):

    def test_probabilities_sum_to_one(self):
        for theta in (0.5, 1.0, 1.5):
            ens = build_exact(*_krawtchouk(3, m=2.0, theta=theta))
            self.assertAlmostEqual(float(ens.probabilities.sum()), 1.0, places=12)

    def test_single_particle_binomial(self):
        ens = build_exact(*_krawtchouk(1))
        np.testing.assert_allclose(ens.positions.ravel(), [0.0, 1.0, 2.0])
        np.testing.assert_allclose(ens.probabilities, [0.25, 0.5, 0.25], rtol=1e-12)

    def test_mean_stieltjes_of_a_single_particle(self):
        ens = build_exact(*_krawtchouk(1))
        self.assertAlmostEqual(mean_stieltjes(ens, 3.0), 0.25 / 3 + 0.5 / 2 + 0.25, places=12)

    def test_theta_one_pair_factor_is_the_squared_gap(self):
        gaps = np.arange(1, 51, dtype=np.float64)
        np.testing.assert_allclose(log_pair_factor(gaps, 1.0), 2 * np.log(gaps), rtol=1e-14)
        for d in range(1, 51):
            self.assertEqual(_rational_pair(Fraction(d), Fraction(1)), d * d)

    def test_general_pair_factor_at_theta_one(self):
        gaps = np.arange(1, 51, dtype=np.float64)
        nearly_one = 1.0 + 1e-12
        np.testing.assert_allclose(log_pair_factor(gaps, nearly_one), 2 * np.log(gaps), atol=1e-9)

    def test_stieltjes_covariance_matches_joint_cumulant(self):
        ens = build_exact(*_krawtchouk(3))
        u, v = 3.0, 4.0
        direct = joint_cumulant(ens, [
            lambda row: np.sum(1.0 / (u - row / 3)),
            lambda row: np.sum(1.0 / (v - row / 3)),
        ])
        self.assertAlmostEqual(abs(stieltjes_covariance(ens, u, v) - direct), 0.0, places=12)


class CumulantTests(SimpleTestCase):

    def test_set_partitions_are_counted_by_bell_numbers(self):
        self.assertEqual([len(list(set_partitions(range(n)))) for n in range(1, 6)], [1, 2, 5, 15, 52])

    def test_second_cumulant_is_the_covariance(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(500, 2))
        expected = np.cov(values[:, 0], values[:, 1], bias=True)[0, 1]
        self.assertAlmostEqual(cumulant_from_moments(values), expected, places=12)

    def test_independent_coordinates_have_zero_joint_cumulant(self):
        # product measure on {0, 1}^3 with uneven marginals
        grid = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.float64)
        marginals = np.array([0.3, 0.6, 0.8])
        weights = np.prod(np.where(grid == 1, marginals, 1 - marginals), axis=1)
        self.assertAlmostEqual(cumulant_from_moments(grid, weights), 0.0, places=12)

    def test_joint_cumulant_arity(self):
        ens = build_exact(*_krawtchouk(1))
        with self.assertRaises(ConfigurationError):
            joint_cumulant(ens, [])


class NekrasovTests(SimpleTestCase):

    def test_krawtchouk_single_particle_is_constant_one(self):
        ens = build_exact(*_krawtchouk(1))
        rng = np.random.default_rng(11)
        xi = rng.uniform(-5, 5, 20) + 1j * rng.uniform(0.5, 5, 20)
        np.testing.assert_allclose(nekrasov_R(ens, xi), np.ones(20), atol=1e-12)

    def test_residues_vanish(self):
        for theta, N in ((1.0, 3), (0.5, 3), (1.5, 2)):
            ens = build_exact(*_krawtchouk(N, m=2.5, theta=theta))
            report = residue_report(ens)
            self.assertTrue(report['passed'], report['max_relative_residue'])

    def test_polynomial_fit(self):
        ens = build_exact(*_krawtchouk(3, theta=0.5))
        self.assertLess(polynomial_fit_residual(ens), 1e-8)

    def test_multicut_residues_vanish(self):
        preset = ModelPreset(
            name='multicut_krawtchouk',
            parameters={'a_hat': [0.0, 1.5], 'b_hat': [1.0, 2.5], 'fillings': [0.5, 0.5]},
        )
        ens = build_exact(*build(preset, 4))
        self.assertTrue(residue_report(ens)['passed'])

    def test_pole_is_detected_when_the_weight_is_wrong(self):
        spec, model = _krawtchouk(2)
        ens = build_exact(spec, model)
        ens.log_masses = ens.log_masses + 0.3 * ens.positions[:, 0]
        ens.log_Z = float(logsumexp(ens.log_masses))
        self.assertFalse(residue_report(ens)['passed'])


class RationalModeTests(SimpleTestCase):

    def test_residues_are_exactly_zero(self):
        for theta, N in ((1.0, 3), (0.5, 3)):
            rens = build_exact_rational(*_krawtchouk(N, theta=theta))
            self.assertTrue(all(value == 0 for value in rational_residues(rens).values()))
        self.assertFalse(any(exact_rational_residues(*_krawtchouk(2)).values()))

    def test_partition_function_matches_closed_form(self):
        for N in (1, 2, 3):
            spec, model = _krawtchouk(N)
            self.assertEqual(build_exact_rational(spec, model).Z, closed_form_krawtchouk_Z(N, model.M))

    def test_closed_form_small_case(self):
        self.assertEqual(closed_form_krawtchouk_Z(2, 2), 8)

    def test_irrational_theta_is_rejected(self):
        with self.assertRaises(ConfigurationError):
            build_exact_rational(*_krawtchouk(2, theta=0.7))


class QDeformationTests(SimpleTestCase):

    def test_q_masses_are_a_distribution(self):
        ens = build_exact_q(*_krawtchouk(2, theta=0.5), q=0.7)
        self.assertAlmostEqual(float(ens.probabilities.sum()), 1.0, places=12)

    def test_q_to_one_limit(self):
        spec, model = _krawtchouk(2, theta=0.5)
        ens = build_exact(spec, model)
        ens_q = build_exact_q(spec, model, q=1 - 1e-4)
        xi = np.array([0.3 + 1.2j, 5.5 - 0.7j, -2.0 + 0.1j])
        plain = nekrasov_R(ens, xi)
        deformed = nekrasov_R_q(ens_q, xi)
        self.assertLess(np.max(np.abs(deformed - plain)), 1e-2 * np.max(np.abs(plain)))

    def test_q_outside_unit_interval(self):
        with self.assertRaises(ConfigurationError):
            build_exact_q(*_krawtchouk(2), q=1.0)
