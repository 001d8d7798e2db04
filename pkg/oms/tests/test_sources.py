import os
import tempfile
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from oms.allocation import estimate_oracle_simplex
from oms.exceptions import ConfigurationError, SchemaError
from oms.sources import (
    FAMILIES, NeymanAllocation, RffFunction, TwoSampleIV, build_scenario, load_empirical, query, read_table, stream,
)
from oms.variance import oracle_surface, oracle_variance, population_moments

from oms.tests.factories import default_snapshot


def write_csv(directory, name, text):
    path = os.path.join(directory, name)
    with open(path, 'w') as handle:
        handle.write(text)
    return path


class QueryTests(SimpleTestCase):

    def test_noiseless_first_stage(self):
        scenario = TwoSampleIV(sigma_x=0, sigma_y=0).scenario()
        rng = stream(0, 0, 0)
        for _ in range(20):
            sample = query(scenario, 0, rng)
            self.assertEqual(set(sample), {'Z', 'X'})
            self.assertEqual(sample['X'], sample['Z'])

    def test_same_stream_state_gives_identical_samples(self):
        scenario = build_scenario({'family': 'late'})
        first = [query(scenario, 1, stream(7, 3, 1)) for _ in range(2)]
        self.assertEqual(first[0], first[1])
        self.assertEqual(query(scenario, 0, stream(7, 3, 0)), query(scenario, 0, stream(7, 3, 0)))

    def test_streams_differ_by_run_and_source(self):
        draws = {(run, d): stream(1, run, d).random() for run in range(3) for d in range(3)}
        self.assertEqual(len(set(draws.values())), len(draws))

    def test_source_out_of_range(self):
        scenario = build_scenario({'family': 'neyman'})
        with self.assertRaises(ConfigurationError):
            query(scenario, 2, stream(0, 0, 0))


class BuildScenarioTests(SimpleTestCase):

    def test_neyman_oracle_allocation(self):
        scenario = build_scenario({'family': 'neyman_allocation', 'params': {'sigma1': 2, 'sigma0': 1}})
        assert_allclose(scenario.truth.kappa_star, [2 / 3, 1 / 3])
        assert_allclose(estimate_oracle_simplex(oracle_surface(scenario), resolution=1e-4), [2 / 3, 1 / 3], atol=1e-4)

    def test_iv_with_symmetric_noise(self):
        scenario = build_scenario({'family': 'two_sample_iv'})
        assert_allclose(scenario.truth.kappa_star, [0.5, 0.5])
        assert_allclose(estimate_oracle_simplex(oracle_surface(scenario)), [0.5, 0.5], atol=2e-3)

    def test_late_oracle_allocation(self):
        scenario = build_scenario({'family': 'two_sample_late'})
        assert_allclose(scenario.truth.kappa_star, [0.65, 0.35], atol=0.01)
        assert_allclose(estimate_oracle_simplex(oracle_surface(scenario)), scenario.truth.kappa_star, atol=2e-3)

    def test_confounder_mediator_prefers_frontdoor(self):
        scenario = build_scenario({'family': 'confounder_mediator'})
        assert_allclose(estimate_oracle_simplex(oracle_surface(scenario)), [0.0, 1.0], atol=0.01)

    def test_cost_defaults_to_ones(self):
        scenario = build_scenario({'family': 'two_confounders_cost'})
        assert_array_equal(scenario.cost, [1.0, 1.0])
        self.assertTrue(scenario.uniform_cost)
        scenario = build_scenario({'family': 'two_confounders_cost', 'cost': [2, 1]})
        assert_array_equal(scenario.cost, [2.0, 1.0])
        self.assertFalse(scenario.uniform_cost)

    def test_invalid_cost(self):
        with self.assertRaises(ConfigurationError):
            build_scenario({'family': 'neyman', 'cost': [1, 0]})
        with self.assertRaises(ConfigurationError):
            build_scenario({'family': 'neyman', 'cost': [1, 1, 1]})

    def test_unknown_family(self):
        with self.assertRaises(ConfigurationError):
            build_scenario({'family': 'jtpa'})

    def test_unknown_parameter(self):
        with self.assertRaises(ConfigurationError):
            build_scenario({'family': 'neyman', 'params': {'sigma2': 1}})

    def test_theta_bound(self):
        scenario = build_scenario({'family': 'iv', 'theta_bound': 10})
        assert_array_equal(scenario.model.theta_box[:, 1], [10.0, 10.0])

    def test_samplers_emit_declared_variables(self):
        for name in FAMILIES:
            scenario = build_scenario({'family': name})
            for d, sampler in enumerate(scenario.samplers):
                batch = sampler(stream(0, 0, d), 5)
                with self.subTest(family=name, source=d):
                    self.assertEqual(set(batch), set(scenario.model.source_variables[d]))


class MomentValidityTests(SimpleTestCase):
    """
    The unmasked moments average to zero at the true parameters and nuisances.
    """

    def test_every_family(self):
        n = 50_000
        for name in FAMILIES:
            scenario = build_scenario({'family': name})
            model = scenario.model
            eta = default_snapshot(scenario)
            theta = scenario.truth.theta
            for d, sampler in enumerate(scenario.samplers):
                active = model.mask(d).astype(bool)
                values = model.evaluate(model.prepare(sampler(stream(5, 0, d), n), eta, active=active), theta)
                mean = values.mean(axis=0)[active]
                error = values.std(axis=0)[active] / np.sqrt(n)
                with self.subTest(family=name, source=d):
                    self.assertTrue(np.all(np.abs(mean) <= 4 * error + 1e-12), (mean, error))

    def test_neyman_plugin_estimate(self):
        n = 200_000
        family = NeymanAllocation()
        treated = family.draw(0, stream(2, 0, 0), n)['Y']
        control = family.draw(1, stream(2, 0, 1), n)['Y']
        error = np.sqrt(treated.var() / n + control.var() / n)
        self.assertLess(abs(treated.mean() - control.mean() - family.truth().beta), 4 * error)


class PopulationMomentTests(SimpleTestCase):
    """
    Closed-form population moments agree with Monte Carlo at the truth.
    """

    def check_family(self, name, kappa):
        scenario = build_scenario({'family': name})
        simulated = replace(scenario, truth=replace(scenario.truth, population=None))
        for (g, omega), (g_mc, omega_mc) in zip(population_moments(scenario), population_moments(simulated, 200_000)):
            assert_allclose(g_mc, g, rtol=0.05, atol=0.02)
            assert_allclose(np.diag(omega_mc), np.diag(omega), rtol=0.05, atol=0.02)
        self.assertAlmostEqual(
            oracle_variance(simulated, kappa, 200_000) / oracle_variance(scenario, kappa), 1.0, delta=0.05)

    def test_neyman(self):
        self.check_family('neyman_allocation', [0.5, 0.5])

    def test_two_sample_iv(self):
        self.check_family('two_sample_iv', [0.4, 0.6])

    def test_two_sample_late(self):
        self.check_family('two_sample_late', [0.5, 0.5])

    def test_confounder_mediator(self):
        self.check_family('confounder_mediator', [0.5, 0.5])

    def test_truth_required(self):
        scenario = build_scenario({'family': 'neyman'})
        with self.assertRaises(ConfigurationError):
            population_moments(replace(scenario, truth=None))


class RffTests(SimpleTestCase):

    def test_same_seed_same_function(self):
        points = np.random.default_rng(0).uniform(-2, 2, (1000, 2))
        first = RffFunction(2, seed=4)(points[:, 0], points[:, 1])
        second = RffFunction(2, seed=4)(points[:, 0], points[:, 1])
        assert_array_equal(first, second)
        self.assertFalse(np.allclose(first, RffFunction(2, seed=5)(points[:, 0], points[:, 1])))

    def test_feature_shapes(self):
        function = RffFunction(1, num_features=100)
        self.assertEqual(function.frequencies.shape, (1, 100))
        self.assertEqual(function.phases.shape, (100,))

    def test_rff_scenario_truth(self):
        scenario = build_scenario({'family': 'rff_late', 'params': {'seed': 1}})
        self.assertEqual(scenario.model.name, 'two_sample_late')
        self.assertTrue(np.isfinite(scenario.truth.beta))
        self.assertEqual(scenario.truth.beta, scenario.truth.theta[0])


class EmpiricalSourceTests(SimpleTestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)

    def test_bootstrap_mean(self):
        path = write_csv(self.directory.name, 'first.csv', 'Z,X\n1,1\n0,0\n')
        source = load_empirical(path, ('Z', 'X'))
        batch = source(stream(0, 0, 0), 10_000)
        self.assertLess(abs(batch['Z'].mean() - 0.5), 0.02)

    def test_single_row(self):
        path = write_csv(self.directory.name, 'one.csv', 'W,Z,Y\n0.5,1,2.5\n')
        batch = load_empirical(path, ('W', 'Z', 'Y'))(stream(0, 0, 0), 50)
        assert_array_equal(batch['Y'], np.full(50, 2.5))
        assert_array_equal(batch['Z'], np.ones(50))

    def test_column_order_does_not_matter(self):
        first = write_csv(self.directory.name, 'a.csv', 'Z,X\n1,2\n3,4\n5,6\n')
        second = write_csv(self.directory.name, 'b.csv', 'X,Z\n2,1\n4,3\n6,5\n')
        left = load_empirical(first, ('Z', 'X'))(stream(9, 0, 0), 100)
        right = load_empirical(second, ('Z', 'X'))(stream(9, 0, 0), 100)
        assert_array_equal(left['Z'], right['Z'])
        assert_array_equal(left['X'], right['X'])

    def test_missing_column(self):
        path = write_csv(self.directory.name, 'c.csv', 'W,Z\n1,0\n')
        with self.assertRaises(SchemaError) as caught:
            read_table(path, ('W', 'Z', 'Y'))
        self.assertEqual(caught.exception.variable, 'Y')

    def test_non_numeric_cell(self):
        path = write_csv(self.directory.name, 'd.csv', 'Z,X\n1,0\n0,abc\n')
        with self.assertRaises(SchemaError) as caught:
            read_table(path, ('Z', 'X'))
        self.assertEqual((caught.exception.variable, caught.exception.row), ('X', 2))

    def test_no_rows(self):
        path = write_csv(self.directory.name, 'e.csv', 'Z,X\n')
        with self.assertRaises(ConfigurationError):
            read_table(path, ('Z', 'X'))

    def test_replay_scenario(self):
        outcome = write_csv(self.directory.name, 'outcome.csv', 'W,Z,Y\n0,1,2\n1,0,1\n')
        treatment = write_csv(self.directory.name, 'treatment.csv', 'W,Z,X,extra\n0,1,1,9\n1,0,0,9\n')
        scenario = build_scenario({
            'family': 'replay',
            'model': 'two_sample_late',
            'sources': [{'path': outcome}, {'path': treatment, 'columns': ['W', 'Z', 'X']}],
            'cost': [4, 1],
        })
        self.assertEqual(scenario.num_sources, 2)
        self.assertIsNone(scenario.truth)
        self.assertEqual(set(query(scenario, 1, stream(0, 0, 1))), {'W', 'Z', 'X'})
        assert_array_equal(scenario.cost, [4.0, 1.0])

    def test_replay_source_count(self):
        outcome = write_csv(self.directory.name, 'outcome.csv', 'W,Z,Y\n0,1,2\n')
        with self.assertRaises(ConfigurationError):
            build_scenario({'family': 'replay', 'model': 'two_sample_late', 'sources': [{'path': outcome}]})
