from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase, override_settings, tag
from numpy.testing import assert_allclose
from scipy.special import expit

from oms.exceptions import ConfigurationError, UnsupportedModelError
from oms.gmm import MomentLog
from oms.moments import NuisanceSlot, aipw_score, get_model
from oms.nuisance import (
    ClampedPropensity, FittedRegression, NuisanceSnapshot, NuisanceSpec, NuisanceTracker, RefitSchedule,
    fit, fit_slot, oracle_nuisance, snapshot_for, untrained_snapshot,
)
from oms.sources import SampleStream, TwoSampleLATE, build_scenario, stream

REGRESSION = NuisanceSlot('outcome_regression', 'regression', 'Z', outcome='Y')
PROPENSITY = NuisanceSlot('propensity', 'propensity', 'Z', ('W',))
FRONTDOOR = NuisanceSlot('frontdoor', 'frontdoor', 'X', outcome='Y', mediator='M')


class FitSlotTests(SimpleTestCase):

    def test_noiseless_regression(self):
        batch = {'Z': np.array([1.0, 2.0, 3.0]), 'Y': np.array([2.0, 4.0, 6.0])}
        fitted = fit_slot(batch, REGRESSION, NuisanceSpec())
        self.assertIsInstance(fitted, FittedRegression)
        self.assertAlmostEqual(fitted.estimator.coef_[0], 2.0, delta=1e-6)
        assert_allclose(fitted(np.array([4.0]), np.zeros((1, 0))), [8.0], atol=1e-5)

    def test_regression_needs_enough_rows(self):
        slot = NuisanceSlot('r', 'regression', 'Z', ('W',), outcome='Y')
        batch = {'Z': np.array([1.0, 0.0]), 'W': np.array([0.1, 0.2]), 'Y': np.array([1.0, 2.0])}
        self.assertIsNone(fit_slot(batch, slot, NuisanceSpec()))

    def test_separable_propensity_is_clamped(self):
        batch = {'W': np.array([-2.0, -1.0, 1.0, 2.0]), 'Z': np.array([0.0, 0.0, 1.0, 1.0])}
        fitted = fit_slot(batch, PROPENSITY, NuisanceSpec())
        self.assertIsInstance(fitted, ClampedPropensity)
        values = fitted(np.linspace(-50, 50, 201)[:, None])
        self.assertTrue(np.all((values >= 0.01) & (values <= 0.99)))
        self.assertAlmostEqual(values.min(), 0.01)
        self.assertAlmostEqual(values.max(), 0.99)

    def test_single_treatment_class(self):
        batch = {'W': np.arange(5.0), 'Z': np.ones(5)}
        self.assertIsNone(fit_slot(batch, PROPENSITY, NuisanceSpec()))

    @override_settings(OMS={'PROPENSITY_CLAMP': 0.1})
    def test_clamp_setting(self):
        batch = {'W': np.array([-2.0, -1.0, 1.0, 2.0]), 'Z': np.array([0.0, 0.0, 1.0, 1.0])}
        values = fit_slot(batch, PROPENSITY, NuisanceSpec())(np.array([[-30.0], [30.0]]))
        assert_allclose(values, [0.1, 0.9])

    def test_frontdoor_add_one_smoothing(self):
        batch = {
            'X': np.array([1.0, 1.0, 1.0, 0.0, 0.0]),
            'M': np.array([1.0, 1.0, 1.0, 0.0, 1.0]),
            'Y': np.array([2.0, 4.0, 3.0, 1.0, 0.0]),
        }
        tables = fit_slot(batch, FRONTDOOR, NuisanceSpec())
        self.assertAlmostEqual(tables.mediator[1, 1], 4 / 5)
        self.assertAlmostEqual(tables.mediator[0, 0], 2 / 4)
        self.assertAlmostEqual(tables.outcome[1, 1], 3.0)
        assert_allclose(tables.treatment, [3 / 7, 4 / 7])

    def test_frontdoor_needs_binary_inputs(self):
        batch = {'X': np.array([0.0, 2.0]), 'M': np.array([0.0, 1.0]), 'Y': np.zeros(2)}
        with self.assertRaises(UnsupportedModelError):
            fit_slot(batch, FRONTDOOR, NuisanceSpec())

    def test_ridge_rff_regression(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(-1, 1, 500)
        z = rng.integers(0, 2, 500).astype(float)
        y = np.sin(2 * w) + z
        slot = NuisanceSlot('r', 'regression', 'Z', ('W',), outcome='Y')
        fitted = fit_slot({'W': w, 'Z': z, 'Y': y}, slot, NuisanceSpec(kind='ridge_rff', ridge_lambda=1e-4))
        error = fitted(z, w[:, None]) - y
        self.assertLess(np.sqrt(np.mean(error ** 2)), 0.15)

    def test_ridge_rff_propensity(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(-1, 1, 2000)
        z = (rng.random(2000) < expit(2 * w)).astype(float)
        fitted = fit_slot({'W': w, 'Z': z}, PROPENSITY, NuisanceSpec(kind='ridge_rff'))
        self.assertLess(np.abs(fitted(np.array([[0.0]])) - 0.5).max(), 0.1)


class SnapshotTests(SimpleTestCase):

    def test_first_query_uses_untrained_snapshot(self):
        snapshots = [untrained_snapshot(get_model('two_sample_late'))]
        snapshot = snapshot_for(1, snapshots)
        self.assertEqual(snapshot.trained_on, 0)
        self.assertEqual(snapshot.untrained, {'propensity', 'outcome_regression', 'treatment_regression'})

    def test_schedule_arithmetic(self):
        snapshots = [NuisanceSnapshot(i, 100 * i) for i in range(3)]
        self.assertEqual(snapshot_for(150, snapshots).trained_on, 100)
        self.assertEqual(snapshot_for(101, snapshots).trained_on, 100)
        self.assertEqual(snapshot_for(100, snapshots).trained_on, 0)
        self.assertEqual(snapshot_for(1000, snapshots).trained_on, 200)

    def test_time_starts_at_one(self):
        with self.assertRaises(ValueError):
            snapshot_for(0, [NuisanceSnapshot(0, 0)])

    def test_unknown_slot(self):
        with self.assertRaises(ConfigurationError):
            NuisanceSnapshot(0, 0).slot('propensity')

    def test_refit_schedule(self):
        schedule = RefitSchedule('every_k', 100)
        self.assertTrue(schedule.due(100))
        self.assertFalse(schedule.due(150))
        self.assertTrue(schedule.due(150, boundary=True))
        batch = RefitSchedule('every_batch', 1)
        self.assertFalse(batch.due(100))
        self.assertTrue(batch.due(37, boundary=True))

    def test_invalid_schedule(self):
        with self.assertRaises(ConfigurationError):
            RefitSchedule('hourly', 1)
        with self.assertRaises(ConfigurationError):
            RefitSchedule('every_k', 0)

    def test_spec_schedule(self):
        self.assertEqual(NuisanceSpec(refit_every='batch').schedule.mode, 'every_batch')
        self.assertEqual(NuisanceSpec(refit_every=25).schedule.k, 25)
        with override_settings(OMS={'REFIT_EVERY': 40}):
            self.assertEqual(NuisanceSpec().schedule.k, 40)

    def test_unknown_kind(self):
        with self.assertRaises(ConfigurationError):
            NuisanceSpec(kind='mlp')


class OracleNuisanceTests(SimpleTestCase):

    def test_true_propensity_passthrough(self):
        family = TwoSampleLATE()
        snapshot = oracle_nuisance(family.scenario())
        w = np.linspace(-3, 3, 13)[:, None]
        assert_allclose(snapshot.slot('propensity')(w), expit(family.p.gamma0 + family.p.gamma1 * w[:, 0]))
        self.assertTrue(snapshot.oracle)
        self.assertEqual(snapshot.trained_on, 0)

    def test_replay_has_no_truth(self):
        scenario = build_scenario({'family': 'late'})
        with self.assertRaises(ConfigurationError):
            oracle_nuisance(replace(scenario, truth=None))

    def test_aipw_mean_equals_reduced_form(self):
        family = TwoSampleLATE()
        snapshot = oracle_nuisance(family.scenario())
        n = 200_000
        batch = family.draw(0, stream(4, 0, 0), n)
        score = aipw_score(batch['W'][:, None], batch['Z'], batch['Y'],
                           snapshot.slot('propensity'), snapshot.slot('outcome_regression'))
        error = score.std() / np.sqrt(n)
        self.assertLess(abs(score.mean() - family.p.beta * family.p.alpha), 4 * error)


class TrackerTests(SimpleTestCase):

    def run_tracker(self, spec, steps=250):
        scenario = build_scenario({'family': 'late'})
        model = scenario.model
        log = MomentLog(model)
        tracker = NuisanceTracker(model, spec, scenario)
        streams = [SampleStream(sampler, stream(0, 0, d)) for d, sampler in enumerate(scenario.samplers)]
        for t in range(1, steps + 1):
            source = t % 2
            snapshot = tracker.current(t)
            self.assertLessEqual(snapshot.trained_on, t - 1)
            log.append(source, streams[source].next(), snapshot)
            tracker.refit(log)
        return tracker, log

    def test_prequential_binding(self):
        tracker, log = self.run_tracker(NuisanceSpec(refit_every=100))
        self.assertEqual([snapshot.trained_on for snapshot in tracker.snapshots], [0, 100, 200])
        trained = {snapshot.snapshot_id: snapshot.trained_on for snapshot in tracker.snapshots}
        for t, snapshot_id in enumerate(log.snapshot_ids, start=1):
            self.assertLessEqual(trained[snapshot_id], t - 1)
        self.assertEqual(tracker.latest.untrained, frozenset())

    def test_boundary_refit(self):
        tracker, log = self.run_tracker(NuisanceSpec(refit_every='batch'), steps=30)
        self.assertEqual(len(tracker.snapshots), 1)
        self.assertTrue(tracker.refit(log, boundary=True))
        self.assertFalse(tracker.refit(log, boundary=True))
        self.assertEqual(tracker.latest.trained_on, 30)

    def test_oracle_tracker_never_refits(self):
        tracker, _ = self.run_tracker(NuisanceSpec(kind='oracle'), steps=120)
        self.assertEqual(len(tracker.snapshots), 1)
        self.assertTrue(tracker.latest.oracle)

    def test_fit_on_empty_log_is_untrained(self):
        model = get_model('two_sample_late')
        snapshot = fit(MomentLog(model), model, NuisanceSpec())
        self.assertEqual(snapshot.untrained, {slot.name for slot in model.slots})

    def test_partial_fit_keeps_constant_predictor(self):
        scenario = build_scenario({'family': 'late'})
        log = MomentLog(scenario.model)
        streams = SampleStream(scenario.samplers[0], stream(0, 0, 0))
        for _ in range(20):
            log.append(0, streams.next(), untrained_snapshot(scenario.model))
        snapshot = fit(log, scenario.model, NuisanceSpec())
        self.assertEqual(snapshot.untrained, {'treatment_regression'})


@tag('slow')
class ConvergenceTests(SimpleTestCase):

    def test_regression_error_shrinks_with_sample_size(self):
        family = TwoSampleLATE()
        slot = get_model('two_sample_late').slot('treatment_regression')
        wins = 0
        for seed in range(100):
            errors = []
            for n in (100, 10_000):
                batch = family.draw(1, stream(seed, n, 1), n)
                fitted = fit_slot(batch, slot, NuisanceSpec())
                errors.append(abs(fitted.estimator.coef_[0] - family.p.alpha))
            wins += errors[1] < errors[0]
        self.assertGreaterEqual(wins, 95)
