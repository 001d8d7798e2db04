import json
import math
import os
import subprocess
import sys
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings

from experiments.config import ExperimentConfig
from experiments.management.commands.run import Command as RunCommand
from experiments.metrics import (
    MetricsRow, aggregate, bootstrap_interval, read_metrics, read_runs, relative_regret, render_runs, to_frame,
    write_metrics, write_runs,
)
from experiments.models import Experiment, MetricsRecord
from experiments.runner import load_config, run_experiment
from experiments.serializers import ExperimentConfigSerializer, RunRecordSerializer
from experiments.simulation import estimate_replay_truth, run_single
from oms.exceptions import DegenerateSurfaceError, UndefinedMetricError, UnderIdentificationError
from oms.policies import PolicySpec, run_policy
from oms.sources import build_scenario


def make_record(policy, horizon, run, squared_error, kind=None, covered=True, kappa=(0.5, 0.5), failure=''):
    return {
        'policy': policy, 'kind': kind or policy, 'scenario': 'neyman_allocation', 'mode': 'horizon',
        'horizon': float(horizon), 'run': run, 'beta_true': 1.0, 'beta_hat': 1.0 + math.sqrt(squared_error),
        'squared_error': squared_error, 'ci_low': 0.5, 'ci_high': 1.5, 'ci_size': 1.0, 'covered': covered,
        'confseq_radius': 0.8, 'confseq_covered': covered, 'kappa': list(kappa), 'budget_spent': float(horizon),
        'num_queries': horizon, 'flags': {}, 'checkpoints': [], 'failure': failure,
    }


def write_csv(path, columns, rows):
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)


def experiment_document(**overrides):
    document = {
        'name': 'neyman-small',
        'scenario': {'family': 'neyman'},
        'policies': [
            {'kind': 'fixed', 'kappa': [0.5, 0.5]},
            {'kind': 'oracle'},
            {'kind': 'etg', 'e': 0.2},
        ],
        'horizons': [60, 120],
        'num_runs': 4,
        'seed': 7,
        'checkpoint_every': 30,
    }
    document.update(overrides)
    return document


def experiment_config(**overrides):
    serializer = ExperimentConfigSerializer(data=experiment_document(**overrides))
    serializer.is_valid(raise_exception=True)
    return serializer.save()


class RelativeRegretTests(SimpleTestCase):

    def test_percent(self):
        self.assertAlmostEqual(relative_regret(1.15, 1.0), 15.0)

    def test_equal(self):
        self.assertEqual(relative_regret(2.0, 2.0), 0.0)

    def test_zero_oracle(self):
        with self.assertRaises(UndefinedMetricError):
            relative_regret(1.0, 0.0)


class BootstrapIntervalTests(SimpleTestCase):

    def test_single_run_degenerates(self):
        self.assertEqual(bootstrap_interval((np.array([2.5]),)), (2.5, 2.5))

    def test_constant_sample(self):
        self.assertEqual(bootstrap_interval((np.ones(10),)), (1.0, 1.0))

    def test_brackets_the_mean(self):
        values = np.random.default_rng(3).normal(size=200)
        low, high = bootstrap_interval((values,), resamples=500, seed=1)
        self.assertLess(low, values.mean())
        self.assertGreater(high, values.mean())
        self.assertEqual((low, high), bootstrap_interval((values,), resamples=500, seed=1))

    def test_empty(self):
        self.assertTrue(all(np.isnan(bootstrap_interval((np.array([]),)))))


class AggregateTests(SimpleTestCase):

    def setUp(self):
        self.records = (
            [make_record('oracle', 100, run, error) for run, error in enumerate([1.0, 2.0, 3.0])]
            + [make_record('fixed', 100, run, error, covered=run > 0, kappa=(0.4 + 0.1 * run, 0.6 - 0.1 * run))
               for run, error in enumerate([2.0, 2.0, 2.0])]
        )

    def test_rows(self):
        oracle, fixed = aggregate(self.records, resamples=200)
        self.assertEqual((oracle.policy, fixed.policy), ('oracle', 'fixed'))
        self.assertAlmostEqual(oracle.mse, 2.0)
        self.assertAlmostEqual(oracle.scaled_mse, 200.0)
        self.assertEqual(oracle.relative_regret_pct, 0.0)
        self.assertEqual((oracle.relative_regret_low, oracle.relative_regret_high), (0.0, 0.0))
        self.assertAlmostEqual(fixed.relative_regret_pct, 0.0)
        self.assertAlmostEqual(fixed.coverage, 2 / 3)
        self.assertEqual((fixed.mse_low, fixed.mse_high), (2.0, 2.0))
        np.testing.assert_allclose(fixed.kappa_mean, [0.5, 0.5])
        np.testing.assert_allclose(fixed.kappa_std, [np.sqrt(2 / 3) / 10] * 2)
        self.assertAlmostEqual(fixed.mean_confseq_size, 1.6)
        self.assertEqual(fixed.num_runs, 3)

    def test_no_oracle_leaves_regret_undefined(self):
        row, = aggregate([record for record in self.records if record['policy'] == 'fixed'])
        self.assertTrue(np.isnan(row.relative_regret_pct))

    def test_estimated_nuisance_oracle_is_the_fallback_reference(self):
        records = [dict(record, kind='oracle_eta_hat', policy='oracle_eta_hat') if record['policy'] == 'oracle'
                   else record for record in self.records]
        _, fixed = aggregate(records, resamples=200)
        self.assertAlmostEqual(fixed.relative_regret_pct, 0.0)

    def test_failed_cell(self):
        records = [make_record('etg', 100, 0, 1.0), make_record('etg', 100, 1, 1.0, failure='boom')]
        row, = aggregate(records)
        self.assertEqual(row.failure, 'boom')
        self.assertTrue(np.isnan(row.mse))

    def test_single_run_error_bars(self):
        row, = aggregate([make_record('fixed', 50, 0, 0.25)])
        self.assertEqual((row.mse_low, row.mse, row.mse_high), (0.25, 0.25, 0.25))

    def test_missing_estimates_are_skipped(self):
        records = [make_record('fixed', 50, 0, 1.0), dict(make_record('fixed', 50, 1, 1.0), squared_error=None)]
        row, = aggregate(records)
        self.assertEqual(row.mse, 1.0)


class MetricsFileTests(SimpleTestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = Path(self.directory.name) / 'metrics.csv'
        self.addCleanup(self.directory.cleanup)

    def test_round_trip(self):
        rows = aggregate(
            [make_record('oracle', 100, run, 1.0 / (run + 3)) for run in range(5)]
            + [make_record('etc', 100, run, 1.0 / (run + 2)) for run in range(5)]
            + [make_record('etg', 100, 0, 1.0, failure='Cost policy, needs "budget".')],
            resamples=100,
        )
        rows.append(MetricsRow(policy='fixed', scenario='late', mode='budget', horizon=1e4, num_runs=2,
                               mse=1 / 3, kappa_mean=[1 / 3, 2 / 3], flags={'ridge_applied': 2}))
        frame = to_frame(rows)
        write_metrics(rows, self.path)
        pd.testing.assert_frame_equal(read_metrics(self.path), frame)

    def test_columns(self):
        write_metrics([MetricsRow(policy='fixed', scenario='iv', mode='horizon', horizon=100, num_runs=1)], self.path)
        header = self.path.read_text().splitlines()[0].split(',')
        self.assertEqual(header[:6], ['policy', 'scenario', 'mode', 'horizon', 'num_runs', 'mse'])
        self.assertIn('relative_regret_pct', header)

    def test_runs_json(self):
        records = [make_record('fixed', 10, 0, 0.5)]
        write_runs(records, Path(self.directory.name) / 'runs.json')
        self.assertEqual(read_runs(Path(self.directory.name) / 'runs.json')[0]['squared_error'], 0.5)


class RunRecordSerializerTests(SimpleTestCase):

    def test_non_finite_values_become_null(self):
        record = make_record('fixed', 10, 0, 0.5)
        record.update(ci_low=-math.inf, ci_high=math.inf, ci_size=math.nan, kappa=[0.5, math.nan])
        data = RunRecordSerializer(record).data
        self.assertIsNone(data['ci_low'])
        self.assertIsNone(data['ci_size'])
        self.assertEqual(data['kappa'], [0.5, None])
        self.assertIn(b'"ci_high":null', render_runs([record]))


class ExperimentConfigSerializerTests(SimpleTestCase):

    def assertInvalid(self, document, field=None):
        serializer = ExperimentConfigSerializer(data=document)
        self.assertFalse(serializer.is_valid())
        if field:
            self.assertIn(field, serializer.errors)
        return serializer.errors

    def test_valid(self):
        config = experiment_config()
        self.assertIsInstance(config, ExperimentConfig)
        self.assertEqual(config.limits, (60, 120))
        self.assertEqual(config.mode, 'horizon')
        self.assertEqual(config.policies[0], PolicySpec('fixed', kappa=(0.5, 0.5)))
        self.assertEqual(len(config.cells), 6)
        self.assertEqual(config.output, {'metrics': 'metrics.csv', 'runs': 'runs.json'})

    @override_settings(OMS={'NUM_RUNS': 12, 'HORIZONS': [10, 20]})
    def test_defaults_from_settings(self):
        document = experiment_document()
        del document['num_runs'], document['horizons']
        serializer = ExperimentConfigSerializer(data=document)
        serializer.is_valid(raise_exception=True)
        config = serializer.save()
        self.assertEqual((config.num_runs, config.limits), (12, (10, 20)))

    def test_horizons_strictly_increasing(self):
        self.assertInvalid(experiment_document(horizons=[100, 100]), 'horizons')

    def test_num_runs(self):
        self.assertInvalid(experiment_document(num_runs=0), 'num_runs')

    def test_unknown_key(self):
        self.assertInvalid(experiment_document(runs=3), 'runs')

    def test_unknown_scenario_parameter(self):
        self.assertInvalid(experiment_document(scenario={'family': 'neyman', 'params': {'sigma2': 1}}), 'scenario')

    def test_cost_must_be_positive(self):
        self.assertInvalid(experiment_document(scenario={'family': 'neyman', 'cost': [1, 0]}), 'scenario')

    def test_exploration_fraction(self):
        self.assertInvalid(experiment_document(policies=[{'kind': 'etc', 'e': 1.0}]), 'policies')

    def test_cost_policy_needs_budgets(self):
        self.assertInvalid(experiment_document(policies=[{'kind': 'etc_cs', 'e': 0.1}]), 'policies')

    def test_budgets_and_horizons_exclusive(self):
        self.assertInvalid(experiment_document(budgets=[100.0]))

    def test_batch_must_fit(self):
        errors = self.assertInvalid(experiment_document(policies=[{'kind': 'etg', 'e': 0.5, 'batch': 40}]), 'policies')
        self.assertIn('T=60', str(errors))

    def test_duplicate_names(self):
        policies = [{'kind': 'etg', 'e': 0.1}, {'kind': 'etg', 'e': 0.2}]
        self.assertInvalid(experiment_document(policies=policies), 'policies')
        policies[1]['label'] = 'etg-20'
        self.assertTrue(ExperimentConfigSerializer(data=experiment_document(policies=policies)).is_valid())

    def test_epsilon_schedule(self):
        policies = [{'kind': 'eps_greedy', 'epsilon': {'kind': 'constant', 'value': 2.0}}]
        self.assertInvalid(experiment_document(policies=policies), 'policies')

    def test_kappa_length(self):
        self.assertInvalid(experiment_document(policies=[{'kind': 'fixed', 'kappa': [0.2, 0.3, 0.5]}]), 'policies')

    def test_refit_schedule(self):
        config = experiment_config(nuisance={'kind': 'linear', 'refit_every': 'batch'})
        self.assertEqual(config.nuisance.schedule.mode, 'every_batch')
        self.assertInvalid(experiment_document(nuisance={'refit_every': 0}), 'nuisance')

    def test_budget_mode(self):
        document = experiment_document(policies=[{'kind': 'etc_cs', 'e': 0.2}], scenario={'family': 'neyman', 'cost': [2, 1]})
        del document['horizons']
        document['budgets'] = [300, 600]
        serializer = ExperimentConfigSerializer(data=document)
        serializer.is_valid(raise_exception=True)
        self.assertEqual(serializer.save().mode, 'budget')


class RunExperimentTests(SimpleTestCase):

    def test_oracle_cell_has_no_regret(self):
        result = run_experiment(experiment_config())
        self.assertEqual([(row.policy, row.horizon) for row in result.metrics],
                         [('fixed', 60), ('fixed', 120), ('oracle', 60), ('oracle', 120), ('etg', 60), ('etg', 120)])
        for row in result.metrics:
            self.assertEqual(row.failure, '')
            self.assertGreaterEqual(row.coverage, 0)
            self.assertLessEqual(row.coverage, 1)
            if row.policy == 'oracle':
                self.assertEqual(row.relative_regret_pct, 0.0)
        self.assertEqual(len(result.records), 24)

    def test_records_recompute_the_table(self):
        result = run_experiment(experiment_config())
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        path = Path(directory.name) / 'runs.json'
        write_runs(result.records, path)
        offline = aggregate(read_runs(path), seed=7)
        pd.testing.assert_frame_equal(to_frame(offline), to_frame(result.metrics))

    def test_more_runs_keep_earlier_records(self):
        small = run_experiment(experiment_config(num_runs=2, policies=[{'kind': 'etg', 'e': 0.2}]))
        large = run_experiment(experiment_config(num_runs=4, policies=[{'kind': 'etg', 'e': 0.2}]))
        by_key = {(record['horizon'], record['run']): record for record in large.records}
        for record in small.records:
            self.assertEqual(render_runs([record]), render_runs([by_key[record['horizon'], record['run']]]))

    def test_parallel_matches_serial(self):
        config = experiment_config(num_runs=3, horizons=[60])
        serial = run_experiment(config, jobs=1)
        parallel = run_experiment(config, jobs=2)
        self.assertEqual(render_runs(serial.records), render_runs(parallel.records))

    def test_worker_module_imports_without_app_registry(self):
        code = 'import experiments.simulation, experiments.config'
        env = {**os.environ, 'DJANGO_SETTINGS_MODULE': 'omslab.settings'}
        completed = subprocess.run([sys.executable, '-c', code], cwd=settings.BASE_DIR, env=env,
                                   capture_output=True, text=True)
        self.assertEqual(completed.returncode, 0, completed.stderr)

    def test_library_error_fails_only_its_cell(self):
        def degenerate_oracle(spec, scenario, **kwargs):
            if spec.kind == 'oracle':
                raise DegenerateSurfaceError('The variance surface is infinite on the whole simplex.')
            return run_policy(spec, scenario, **kwargs)

        config = experiment_config(num_runs=2, horizons=[60])
        with mock.patch('experiments.simulation.run_policy', side_effect=degenerate_oracle):
            result = run_experiment(config)
        rows = {row.policy: row for row in result.metrics}
        self.assertEqual(rows['oracle'].failure,
                         'DegenerateSurfaceError: The variance surface is infinite on the whole simplex.')
        self.assertEqual(rows['fixed'].failure, '')
        self.assertEqual(rows['etg'].failure, '')
        self.assertTrue(np.isfinite(rows['fixed'].mse))
        self.assertTrue(np.isnan(rows['fixed'].relative_regret_pct))

    def test_unidentified_run_is_recorded(self):
        with mock.patch('experiments.simulation.run_policy',
                        side_effect=UnderIdentificationError(1, 'control')):
            record = run_single(experiment_config(), PolicySpec('etc', e=0.2), 60, 0)
        self.assertEqual(record['failure'], 'UnderIdentificationError: Moment 1 (control) has no selected records.')
        self.assertIsNone(record['squared_error'])

    def test_checkpoint_coverage_flags(self):
        record = run_single(experiment_config(), PolicySpec('fixed', kappa=(0.5, 0.5)), 60, 0)
        self.assertEqual([checkpoint['t'] for checkpoint in record['checkpoints']], [30, 60])
        self.assertEqual(record['confseq_covered'], all(c['confseq_covered'] for c in record['checkpoints']))
        self.assertEqual(record['covered'], record['ci_low'] <= 1.0 <= record['ci_high'])
        self.assertEqual(record['num_queries'], 60)


class ReplayTests(SimpleTestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.treated = Path(self.directory.name) / 'treated.csv'
        self.control = Path(self.directory.name) / 'control.csv'
        write_csv(self.treated, ['Y'], [[0], [2], [4], [6]])
        write_csv(self.control, ['Y', 'note'], [[1, 'a'], [1, 'b'], [2, 'c'], [2, 'd']])

    def scenario_document(self, **extra):
        return {
            'family': 'replay', 'model': 'neyman_allocation',
            'sources': [{'path': str(self.treated)}, {'path': str(self.control)}], **extra,
        }

    def test_estimated_truth(self):
        scenario = estimate_replay_truth(build_scenario(self.scenario_document()))
        self.assertAlmostEqual(scenario.truth.beta, 1.5, places=8)
        # allocation proportional to the per-table standard deviations
        np.testing.assert_allclose(scenario.truth.kappa_star, [np.sqrt(5) / (np.sqrt(5) + 0.5), 0.5 / (np.sqrt(5) + 0.5)],
                                   atol=2e-3)

    def test_given_truth_is_kept(self):
        scenario = estimate_replay_truth(build_scenario(self.scenario_document(truth={'beta': 2.0})))
        self.assertEqual(scenario.truth.beta, 2.0)
        self.assertIsNotNone(scenario.truth.kappa_star)

    def test_oracle_with_true_nuisances_fails_its_cell(self):
        config = experiment_config(scenario=self.scenario_document(), policies=[{'kind': 'oracle'}],
                                   horizons=[20], num_runs=2, checkpoint_every=10)
        row, = run_experiment(config).metrics
        self.assertIn('oracle nuisances', row.failure)


class CommandTests(TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.root = Path(self.directory.name)

    def config_file(self, **overrides):
        path = self.root / 'config.json'
        document = experiment_document(**{'horizons': [40], 'num_runs': 3, 'checkpoint_every': 20, **overrides})
        path.write_text(json.dumps(document))
        return path

    def test_oracle(self):
        out = StringIO()
        call_command('oracle', '--scenario', 'neyman', '--sigma1', '2', '--sigma0', '1', stdout=out)
        self.assertEqual(out.getvalue().strip(), 'κ*=(0.6667, 0.3333), V*=9.0000')

    def test_oracle_unknown_family(self):
        with self.assertRaises(CommandError) as raised:
            call_command('oracle', '--scenario', 'bandit', stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 1)

    def test_oracle_parameter_of_another_family(self):
        with self.assertRaises(CommandError) as raised:
            call_command('oracle', '--scenario', 'neyman', '--rho', '0.3', stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 1)

    def test_run_is_deterministic(self):
        config = self.config_file()
        call_command('run', '--config', str(config), '--out', str(self.root / 'first'), stdout=StringIO())
        call_command('run', '--config', str(config), '--out', str(self.root / 'second'), stdout=StringIO())
        first = (self.root / 'first' / 'metrics.csv').read_bytes()
        self.assertEqual(first, (self.root / 'second' / 'metrics.csv').read_bytes())
        self.assertEqual((self.root / 'first' / 'runs.json').read_bytes(),
                         (self.root / 'second' / 'runs.json').read_bytes())

    def test_run_parallel_matches_serial(self):
        config = self.config_file()
        call_command('run', '--config', str(config), '--out', str(self.root / 'serial'), stdout=StringIO())
        call_command('run', '--config', str(config), '--out', str(self.root / 'parallel'), '--jobs', '2',
                     stdout=StringIO())
        for name in ('metrics.csv', 'runs.json'):
            self.assertEqual((self.root / 'serial' / name).read_bytes(), (self.root / 'parallel' / name).read_bytes())

    def test_run_seed_flag(self):
        config = self.config_file()
        call_command('run', '--config', str(config), '--out', str(self.root / 'a'), '--seed', '1', stdout=StringIO())
        call_command('run', '--config', str(config), '--out', str(self.root / 'b'), stdout=StringIO())
        self.assertNotEqual((self.root / 'a' / 'metrics.csv').read_bytes(),
                            (self.root / 'b' / 'metrics.csv').read_bytes())

    def test_run_store(self):
        call_command('run', '--config', str(self.config_file()), '--out', str(self.root / 'out'), '--store',
                     stdout=StringIO())
        experiment = Experiment.objects.get()
        self.assertEqual(experiment.status, Experiment.FINISHED)
        self.assertEqual(experiment.metrics.count(), 3)
        oracle = MetricsRecord.objects.get(policy='oracle')
        self.assertEqual(oracle.relative_regret_pct, 0.0)
        self.assertEqual(len(oracle.kappa_mean), 2)

    def test_invalid_config_exits_1(self):
        with self.assertRaises(CommandError) as raised:
            call_command('run', '--config', str(self.config_file(num_runs=0)), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 1)
        self.assertIn('num_runs', str(raised.exception))

    def test_missing_config_exits_1(self):
        with self.assertRaises(CommandError) as raised:
            call_command('validate', '--config', str(self.root / 'absent.json'), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 1)

    def test_runtime_failure_exits_2(self):
        with mock.patch('experiments.management.commands.run.run_experiment', side_effect=RuntimeError('boom')):
            with self.assertRaises(CommandError) as raised:
                call_command('run', '--config', str(self.config_file()), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 2)

    def test_unknown_flag_exits_1(self):
        with self.assertRaises(SystemExit) as raised:
            RunCommand(stdout=StringIO(), stderr=StringIO()).run_from_argv(['manage.py', 'run', '--bogus'])
        self.assertEqual(raised.exception.code, 1)

    def test_validate(self):
        out = StringIO()
        call_command('validate', '--config', str(self.config_file()), stdout=out)
        self.assertIn("'neyman-small' is valid: 3 cells x 3 runs", out.getvalue())

    def test_validate_names_missing_column(self):
        csv_path = self.root / 'table.csv'
        write_csv(csv_path, ['Z'], [[1.0], [2.0]])
        scenario = {'family': 'replay', 'model': 'neyman_allocation',
                    'sources': [{'path': str(csv_path)}, {'path': str(csv_path)}]}
        config = self.config_file(scenario=scenario, policies=[{'kind': 'etc', 'e': 0.2}])
        with self.assertRaises(CommandError) as raised:
            call_command('validate', '--config', str(config), stdout=StringIO())
        self.assertEqual(raised.exception.returncode, 1)
        self.assertIn("'Y'", str(raised.exception))

    def test_replay(self):
        treated, control = self.root / 'treated.csv', self.root / 'control.csv'
        write_csv(treated, ['Y'], [[0], [2], [4], [6]])
        write_csv(control, ['Y'], [[1], [1], [2], [2]])
        out = StringIO()
        call_command('replay', '--model', 'neyman_allocation', '--source', str(treated), '--source', str(control),
                     '--policies', 'fixed', 'etc', '--horizons', '40', '--num-runs', '2',
                     '--out', str(self.root / 'replay'), stdout=out)
        self.assertIn('beta*=1.5', out.getvalue())
        frame = read_metrics(self.root / 'replay' / 'metrics.csv')
        self.assertEqual(frame['policy'].tolist(), ['fixed', 'etc'])
        self.assertTrue((frame['failure'] == '').all())

    def test_load_config_seed_override(self):
        self.assertEqual(load_config(self.config_file(), seed=11).seed, 11)
