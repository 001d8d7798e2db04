import itertools

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from oms.allocation import (
    CostFeasibleSet, FeasibleSet, apportion, continuation, cost_feasible_set, estimate_oracle_simplex,
    minimize_on_simplex, oracle_allocation, oracle_kappa, project, project_simplex, simplex_grid,
)
from oms.exceptions import DegenerateSurfaceError
from oms.sources import build_scenario
from oms.variance import oracle_surface, variance_at


class ProjectSimplexTests(SimpleTestCase):

    def test_inside_point_is_fixed(self):
        assert_allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])

    def test_outside_points(self):
        assert_allclose(project_simplex([1.5, -0.5]), [1.0, 0.0])
        assert_allclose(project_simplex([1.0, 1.0]), [0.5, 0.5])
        assert_allclose(project_simplex([0.0, 0.0, 3.0]), [0.0, 0.0, 1.0])

    def test_grid(self):
        points = list(simplex_grid(3, 0.5))
        self.assertEqual(len(points), 6)
        assert_allclose(points[0], [0.0, 0.0, 1.0])
        for point in points:
            self.assertAlmostEqual(point.sum(), 1.0)


class EstimateOracleSimplexTests(SimpleTestCase):

    def setUp(self):
        self.neyman = build_scenario({'family': 'neyman', 'params': {'sigma1': 2, 'sigma0': 1}})
        self.surface = oracle_surface(self.neyman)

    def test_neyman_allocation(self):
        kappa = estimate_oracle_simplex(self.surface)
        assert_allclose(kappa, [2 / 3, 1 / 3], atol=1e-3)
        self.assertAlmostEqual(variance_at(self.surface, kappa) / 9.0, 1.0, delta=0.005)

    def test_uniform_cost_leaves_argmin(self):
        assert_allclose(
            estimate_oracle_simplex(self.surface, cost=[1.0, 1.0]), estimate_oracle_simplex(self.surface), atol=1e-9)

    def test_cost_weighting(self):
        # optimum proportional to sigma_d / sqrt(c_d)
        kappa = estimate_oracle_simplex(self.surface, cost=[4.0, 1.0])
        assert_allclose(kappa, [0.5, 0.5], atol=1e-3)

    def test_frontdoor_dominance(self):
        surface = oracle_surface(build_scenario({'family': 'confounder_mediator'}))
        assert_allclose(estimate_oracle_simplex(surface), [0.0, 1.0], atol=0.01)

    def test_bracket_search_agrees_with_grid(self):
        surface = oracle_surface(build_scenario({'family': 'late'}))
        searched = estimate_oracle_simplex(surface)
        grid = np.linspace(0, 1, 1001)
        values = [variance_at(surface, [x, 1 - x]) for x in grid]
        self.assertLess(abs(searched[0] - grid[int(np.argmin(values))]), 0.002)

    def test_three_sources(self):
        centre = np.array([0.2, 0.3, 0.5])
        kappa, value = minimize_on_simplex(lambda k: float(np.sum((k - centre) ** 2)), 3, resolution=0.05)
        assert_allclose(kappa, centre, atol=1e-3)
        self.assertLess(value, 1e-6)

    def test_three_sources_on_a_face(self):
        kappa, _ = minimize_on_simplex(lambda k: float(np.sum((k - [0.7, 0.6, -0.3]) ** 2)), 3, resolution=0.05)
        assert_allclose(kappa, [0.55, 0.45, 0.0], atol=1e-3)

    def test_degenerate(self):
        with self.assertRaises(DegenerateSurfaceError):
            minimize_on_simplex(lambda k: np.inf, 2)
        with self.assertRaises(DegenerateSurfaceError):
            minimize_on_simplex(lambda k: np.inf, 3, resolution=0.1)

    def test_oracle_allocation(self):
        kappa, value = oracle_allocation(self.neyman)
        assert_allclose(kappa, [2 / 3, 1 / 3])
        self.assertAlmostEqual(value, 9.0)

    def test_cost_weighted_oracle_ignores_closed_form(self):
        scenario = build_scenario({'family': 'neyman', 'cost': [4, 1]})
        assert_allclose(oracle_kappa(scenario), [2 / 3, 1 / 3])
        assert_allclose(oracle_kappa(scenario, cost_weighted=True), [0.5, 0.5], atol=1e-3)


class ProjectTests(SimpleTestCase):

    def test_exploration_boundary(self):
        feasible = FeasibleSet(base=np.array([0.5, 0.5]), past_weight=0.2)
        assert_allclose(project([1.0, 0.0], feasible), [0.9, 0.1])

    def test_greedy_round(self):
        feasible = FeasibleSet(base=np.array([0.5, 0.5]), past_weight=100 / 200)
        assert_allclose(project([1.0, 0.0], feasible), [0.75, 0.25])

    def test_idempotent_inside_the_set(self):
        feasible = FeasibleSet(base=np.array([0.5, 0.5]), past_weight=0.2)
        assert_allclose(project([0.6, 0.4], feasible), [0.6, 0.4])

    def test_full_past_returns_base(self):
        feasible = FeasibleSet(base=np.array([0.3, 0.7]), past_weight=1.0)
        assert_allclose(project([1.0, 0.0], feasible), [0.3, 0.7])

    def test_output_is_a_member(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            base = rng.dirichlet(np.ones(3))
            weight = rng.uniform(0, 0.9)
            feasible = FeasibleSet(base=base, past_weight=weight)
            kappa = continuation(rng.dirichlet(np.ones(3)), feasible)
            self.assertTrue(np.all(kappa >= 0))
            self.assertAlmostEqual(kappa.sum(), 1.0)
            assert_allclose(feasible.free(feasible.member(kappa)), kappa, atol=1e-10)


class ApportionTests(SimpleTestCase):

    def test_tie_goes_to_lower_index(self):
        assert_array_equal(apportion([0.65, 0.35], 10).counts, [7, 3])

    def test_vertex(self):
        assert_array_equal(apportion([1.0, 0.0], 5).counts, [5, 0])

    def test_empty(self):
        assert_array_equal(apportion([0.3, 0.7], 0).counts, [0, 0])

    def test_reconstructs_target(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            target = rng.dirichlet(np.ones(4))
            n = int(rng.integers(1, 500))
            result = apportion(target, n)
            self.assertEqual(result.counts.sum(), n)
            self.assertLess(np.abs(result.counts - n * target).max(), 1.0)
            self.assertLessEqual(np.abs(result.counts / n - target).max(), 1.0 / n)


class CostFeasibleSetTests(SimpleTestCase):

    def test_affordable_horizon(self):
        feasible = cost_feasible_set(0.0, 100.0, [0.5, 0.5], 0, [2.0, 1.0])
        self.assertIsInstance(feasible, CostFeasibleSet)
        self.assertEqual(feasible.horizon(np.array([0.5, 0.5])), 66)

    def test_uniform_cost_reduces_to_shrunken_simplex(self):
        feasible = cost_feasible_set(30.0, 100.0, [0.2, 0.8], 30, [1.0, 1.0])
        self.assertIsInstance(feasible, FeasibleSet)
        self.assertAlmostEqual(feasible.past_weight, 0.3)
        assert_allclose(feasible.base, [0.2, 0.8])

    def test_nearly_spent_budget_matches_enumeration(self):
        feasible = cost_feasible_set(90.0, 100.0, [1.0, 0.0], 45, [2.0, 1.0])
        target = np.array([0.0, 1.0])
        reachable = [
            np.array([45 + n0, n1]) / (45 + n0 + n1)
            for n0, n1 in itertools.product(range(6), range(11)) if 2 * n0 + n1 <= 10
        ]
        best = min(reachable, key=lambda kappa: np.sum((kappa - target) ** 2))
        assert_allclose(best, [45 / 55, 10 / 55])
        assert_allclose(project(target, feasible), best, atol=1e-9)

    def test_members_are_simplex_points(self):
        feasible = cost_feasible_set(20.0, 100.0, [0.5, 0.5], 14, [2.0, 1.0])
        for x in np.linspace(0, 1, 11):
            member = feasible.member(np.array([x, 1 - x]))
            self.assertAlmostEqual(member.sum(), 1.0)
            self.assertTrue(np.all(member >= 0))
