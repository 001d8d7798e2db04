from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase, tag
from numpy.testing import assert_allclose, assert_array_equal

from oms.allocation import estimate_oracle_simplex
from oms.exceptions import ConfigurationError
from oms.gmm import two_step_estimate
from oms.moments import get_model
from oms.sources import build_scenario
from oms.variance import (
    as_simplex_point, build_surface, mask_expectations, on_policy_variance, oracle_surface, oracle_variance,
    sandwich, variance_at,
)

from oms.tests.factories import draw_log, log_from_records, mean_model


class SimplexPointTests(SimpleTestCase):

    def test_valid_point(self):
        assert_allclose(as_simplex_point([0.25, 0.75]), [0.25, 0.75])

    def test_invalid_points(self):
        for weights in ([0.5, 0.6], [-0.1, 1.1], [[0.5, 0.5]]):
            with self.subTest(weights=weights):
                with self.assertRaises(ConfigurationError):
                    as_simplex_point(weights)


class MaskExpectationTests(SimpleTestCase):

    def test_disjoint_masks(self):
        m_g, m_omega = mask_expectations(get_model('two_sample_late'), [0.3, 0.7])
        assert_allclose(m_omega, [[0.3, 0.0], [0.0, 0.7]])
        assert_allclose(m_g, [[0.3, 0.3], [0.7, 0.7]])

    def test_shared_source(self):
        _, m_omega = mask_expectations(get_model('two_confounders_cost'), [0.4, 0.6])
        assert_allclose(m_omega, [[0.4, 0.4, 0.0], [0.4, 0.4, 0.0], [0.0, 0.0, 0.6]])


class BuildSurfaceTests(SimpleTestCase):

    def test_mean_model(self):
        surface = build_surface(log_from_records(mean_model(), [(0, {'Y': 0.0}), (0, {'Y': 2.0})]), [1.0])
        assert_allclose(surface.G_hat, [[-1.0]])
        assert_allclose(surface.Omega_hat, [[1.0]])
        assert_array_equal(surface.kappa_T, [1.0])

    def test_iv_jacobian_by_hand(self):
        model = get_model('two_sample_iv')
        log = log_from_records(model, [(0, {'Z': 1.0, 'X': 2.0}), (1, {'Z': 2.0, 'Y': 1.0})])
        surface = build_surface(log, [3.0, 1.0])
        # first stage: (0, -Z^2); reduced form: (-Z^2 alpha, -Z^2 beta); averaged over two records
        assert_allclose(surface.G_hat, [[0.0, -0.5], [-2.0, -6.0]])
        assert_allclose(surface.Omega_hat, surface.Omega_hat.T)
        assert_array_equal(surface.mask_table, model.mask_table)


class VarianceAtTests(SimpleTestCase):

    def setUp(self):
        self.neyman = oracle_surface(build_scenario({'family': 'neyman', 'params': {'sigma1': 2, 'sigma0': 1}}))

    def test_neyman_closed_form(self):
        self.assertAlmostEqual(variance_at(self.neyman, [0.5, 0.5]), 10.0, places=9)
        self.assertAlmostEqual(variance_at(self.neyman, [2 / 3, 1 / 3]), 9.0, places=9)
        for k in np.linspace(0.05, 0.95, 19):
            self.assertAlmostEqual(variance_at(self.neyman, [k, 1 - k]), 4 / k + 1 / (1 - k), places=8)

    def test_unobservable_moment_is_infinite(self):
        surface = oracle_surface(build_scenario({'family': 'late'}))
        self.assertEqual(variance_at(surface, [0.0, 1.0]), np.inf)
        self.assertTrue(np.isfinite(variance_at(surface, [1e-3, 1 - 1e-3])))

    def test_scaling_covariance_scales_variance(self):
        scaled = replace(self.neyman, Omega_hat=4 * self.neyman.Omega_hat)
        for k in (0.2, 0.5, 0.8):
            self.assertAlmostEqual(variance_at(scaled, [k, 1 - k]), 4 * variance_at(self.neyman, [k, 1 - k]))
        assert_allclose(estimate_oracle_simplex(scaled), estimate_oracle_simplex(self.neyman), atol=1e-9)

    def test_consistent_scaling_leaves_variance_unchanged(self):
        scaled = replace(self.neyman, G_hat=3 * self.neyman.G_hat, Omega_hat=9 * self.neyman.Omega_hat)
        self.assertAlmostEqual(variance_at(scaled, [0.3, 0.7]), variance_at(self.neyman, [0.3, 0.7]))

    def test_neyman_variance_is_convex(self):
        step = 1e-3
        for k in np.linspace(0.05, 0.95, 10):
            values = [variance_at(self.neyman, [x, 1 - x]) for x in (k - step, k, k + step)]
            self.assertGreater(values[0] - 2 * values[1] + values[2], 0)

    def test_sandwich_without_active_moments(self):
        self.assertEqual(sandwich(np.ones((1, 1)), np.ones((1, 1)), np.ones(1), np.array([False])), np.inf)

    def test_singular_covariance(self):
        self.assertEqual(sandwich(np.eye(2), np.ones((2, 2)), np.ones(2), np.array([True, True])), np.inf)


class ReweightingIdentityTests(SimpleTestCase):
    """
    Evaluating a surface at the allocation it was estimated under reproduces the on-policy estimate.
    """

    def test_every_model(self):
        rng = np.random.default_rng(8)
        for family in ('neyman', 'iv', 'late', 'confounder_mediator', 'two_confounders_cost'):
            scenario = build_scenario({'family': family})
            for seed in range(20):
                counts = rng.integers(20, 120, scenario.num_sources)
                log = draw_log(scenario, counts, seed=seed)
                theta = two_step_estimate(log).theta
                with self.subTest(family=family, seed=seed):
                    on_policy = on_policy_variance(log, theta)
                    reweighted = variance_at(build_surface(log, theta), log.kappa)
                    self.assertAlmostEqual(reweighted, on_policy, delta=1e-10 * max(1.0, abs(on_policy)))


class OracleVarianceTests(SimpleTestCase):

    def test_neyman_oracle_value(self):
        scenario = build_scenario({'family': 'neyman'})
        self.assertAlmostEqual(oracle_variance(scenario, [2 / 3, 1 / 3]), 9.0, places=9)

    def test_requires_truth(self):
        scenario = build_scenario({'family': 'neyman'})
        with self.assertRaises(ConfigurationError):
            oracle_variance(replace(scenario, truth=None), [0.5, 0.5])

    def test_surface_is_cached(self):
        scenario = build_scenario({'family': 'iv'})
        self.assertIs(oracle_surface(scenario), oracle_surface(scenario))


@tag('slow')
class EstimatorAgreementTests(SimpleTestCase):

    def test_fixed_log_matches_population(self):
        for family in ('neyman', 'iv', 'late'):
            scenario = build_scenario({'family': family})
            log = draw_log(scenario, (100_000, 100_000))
            surface = build_surface(log, scenario.truth.theta)
            with self.subTest(family=family):
                self.assertAlmostEqual(
                    variance_at(surface, [0.5, 0.5]) / oracle_variance(scenario, [0.5, 0.5]), 1.0, delta=0.02)

    def test_grid_argmin_is_consistent(self):
        scenario = build_scenario({'family': 'late'})
        hits = 0
        for seed in range(200):
            log = draw_log(scenario, (50_000, 50_000), run=seed)
            k_hat = estimate_oracle_simplex(build_surface(log, two_step_estimate(log).theta))
            hits += np.abs(k_hat - scenario.truth.kappa_star).max() <= 0.02
        self.assertGreaterEqual(hits, 180)
