import numpy as np
from django.test import SimpleTestCase, tag

from oms.exceptions import ConfigurationError
from oms.inference import (
    ConfSeqParams, InferenceSpec, Interval, choose_rho, confidence_interval, confseq_radius, normal_quantile,
)
from oms.policies import PolicySpec, run_policy
from oms.sources import build_scenario


class ConfidenceIntervalTests(SimpleTestCase):

    def test_wald_halfwidth(self):
        interval = confidence_interval(1.0, 1.0, 100, alpha=0.05)
        self.assertAlmostEqual(interval.halfwidth, 0.1959964, places=7)
        self.assertAlmostEqual(interval.lower, 1 - 0.1959964, places=7)
        self.assertAlmostEqual(interval.level, 0.95)

    def test_quantile(self):
        self.assertAlmostEqual(normal_quantile(0.975), 1.959963984540054, places=12)
        self.assertEqual(normal_quantile(0.5), 0.0)

    def test_shrinks_as_alpha_grows(self):
        widths = [confidence_interval(0.0, 2.0, 50, alpha).halfwidth for alpha in (0.01, 0.05, 0.5, 0.999)]
        self.assertEqual(widths, sorted(widths, reverse=True))
        self.assertLess(widths[-1], 1e-3)

    def test_zero_variance(self):
        interval = confidence_interval(3.0, 0.0, 10)
        self.assertEqual(interval.halfwidth, 0.0)
        self.assertTrue(interval.covers(3.0))
        self.assertFalse(interval.covers(3.0001))

    def test_covers(self):
        interval = Interval(center=0.0, halfwidth=1.0, level=0.95)
        self.assertTrue(interval.covers(-1.0))
        self.assertFalse(interval.covers(1.5))


class ConfidenceSequenceTests(SimpleTestCase):

    def test_radius(self):
        # (0.01 * 100 + 1) / (100 ** 2 * 0.01) * log(2 / 0.05 ** 2)
        self.assertAlmostEqual(confseq_radius(100, 1.0, 0.1, 0.05), np.sqrt(0.02 * np.log(800)), places=12)

    def test_wider_than_interval(self):
        for t in (10, 100, 10_000):
            for v in (0.1, 1.0, 25.0):
                with self.subTest(t=t, v=v):
                    halfwidth = confidence_interval(0.0, v, t).halfwidth
                    self.assertGreater(confseq_radius(t, v, choose_rho(t, v), 0.05), halfwidth)

    def test_shrinks_slower_than_root_t(self):
        rho = choose_rho(100, 1.0)
        radii = [confseq_radius(t, 1.0, rho) for t in (100, 10_000, 1_000_000)]
        self.assertEqual(radii, sorted(radii, reverse=True))
        scaled = [radius * np.sqrt(t) for radius, t in zip(radii, (100, 10_000, 1_000_000))]
        self.assertEqual(scaled, sorted(scaled))

    def test_increasing_in_variance(self):
        radii = [confseq_radius(500, v, 0.05) for v in (0.0, 0.5, 1.0, 10.0)]
        self.assertEqual(radii, sorted(radii))

    def test_params(self):
        for rho, alpha in ((0.0, 0.05), (-1.0, 0.05), (0.1, 0.0), (0.1, 1.0)):
            with self.subTest(rho=rho, alpha=alpha):
                with self.assertRaises(ConfigurationError):
                    ConfSeqParams(rho=rho, alpha=alpha)


class ChooseRhoTests(SimpleTestCase):

    def test_stationary_point(self):
        # with s = t V rho^2 + 1 the optimum solves s - log s = 1 + log(1 / alpha^2)
        rho = choose_rho(100, 1.0, alpha=0.05)
        s = 100 * rho ** 2 + 1
        self.assertAlmostEqual(s - np.log(s), 1 + np.log(400), places=4)
        self.assertAlmostEqual(confseq_radius(100, 1.0, rho, 0.05) ** 2, s / 100, places=5)

    def test_beats_a_grid(self):
        best = confseq_radius(1000, 2.0, choose_rho(1000, 2.0))
        grid = [confseq_radius(1000, 2.0, np.exp(x)) for x in np.arange(-10, 10, 0.002)]
        self.assertLessEqual(best, min(grid) + 1e-9)

    def test_scaling(self):
        rho = choose_rho(100, 1.0)
        self.assertAlmostEqual(choose_rho(200, 1.0) / rho, 1 / np.sqrt(2), places=3)
        self.assertAlmostEqual(choose_rho(100, 4.0) / rho, 0.5, places=3)


class InferenceSpecTests(SimpleTestCase):

    def test_given_rho(self):
        params = InferenceSpec(alpha=0.1, rho=0.3).confseq(1000)
        self.assertEqual((params.rho, params.alpha), (0.3, 0.1))

    def test_tuned_at_horizon(self):
        self.assertAlmostEqual(InferenceSpec().confseq(1000).rho, choose_rho(1000, 1.0))

    def test_tuned_at_t_opt(self):
        params = InferenceSpec(t_opt=50, v_guess=3.0).confseq(1000)
        self.assertAlmostEqual(params.rho, choose_rho(50, 3.0))

    def test_default_alpha(self):
        self.assertEqual(InferenceSpec().level_alpha, 0.05)


@tag('slow')
class CoverageTests(SimpleTestCase):

    def test_interval_and_sequence_coverage(self):
        scenario = build_scenario({'family': 'iv'})
        spec = PolicySpec('fixed', kappa=(0.5, 0.5))
        interval_hits = sequence_hits = 0
        runs = 200
        for run in range(runs):
            trajectory = run_policy(spec, scenario, horizon=2000, run=run, checkpoint_every=200)
            beta = scenario.truth.beta
            final = trajectory.final
            interval_hits += final['ci_low'] <= beta <= final['ci_high']
            sequence_hits += all(
                abs(record['beta'] - beta) <= record['confseq_radius'] for record in trajectory.checkpoints)
        self.assertGreaterEqual(interval_hits / runs, 0.9)
        self.assertGreaterEqual(sequence_hits / runs, 0.9)
