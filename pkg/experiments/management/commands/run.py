"""
``manage.py run --config PATH``: run an experiment grid.
"""

from pathlib import Path

from experiments.management.base import OMSCommand
from experiments.runner import load_config, run_experiment, store as store_result, write_results
from oms.conf import oms_settings


class Command(OMSCommand):
    help = 'Run every (policy, horizon) cell of an experiment configuration and write the metrics CSV and per-run JSON.'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Experiment configuration file (JSON).')
        parser.add_argument('--out', help='Output directory (default: RESULTS_DIR/<name>).')
        parser.add_argument('--jobs', type=int, default=1, help='Parallel workers.')
        parser.add_argument('--seed', type=int, help='Base seed, overriding the configuration.')
        parser.add_argument('--store', action='store_true', help='Persist the metrics table in the database.')

    def run_command(self, config, out=None, jobs=1, seed=None, store=False, **options):
        experiment = load_config(config, seed=seed)
        result = run_experiment(experiment, jobs=jobs)
        out = Path(out) if out else Path(oms_settings.RESULTS_DIR) / experiment.name
        metrics_path, runs_path = write_results(result, out)
        failed = [row for row in result.metrics if row.failure]
        for row in failed:
            self.stderr.write(self.style.ERROR(f"{row.policy} @ {row.horizon:g}: {row.failure}"))
        self.success(f"Wrote {metrics_path} and {runs_path}.")
        if store:
            saved = store_result(result)
            self.success(f"Stored experiment {saved.pk}.")
