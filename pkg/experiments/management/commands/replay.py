"""
``manage.py replay --source A.csv --source B.csv ...``: run policies on
bootstrap replays of CSV tables, one table per data source.
"""

from pathlib import Path

from experiments.management.base import OMSCommand
from experiments.runner import run_experiment, write_results
from experiments.serializers import ExperimentConfigSerializer
from experiments.simulation import load_scenario
from oms.conf import oms_settings
from oms.moments import MODELS, get_model
from oms.policies import POLICY_KINDS

EXPLORING_KINDS = ('etc', 'etg', 'etc_cs', 'etg_cs')


class Command(OMSCommand):
    help = 'Run policies on CSV-backed data sources; the true target is estimated from the full tables unless given.'

    def add_arguments(self, parser):
        parser.add_argument('--model', default='two_sample_late', choices=sorted(MODELS), help='Moment model.')
        parser.add_argument('--source', action='append', required=True, dest='sources',
                            help='CSV table of the next data source, in source order.')
        parser.add_argument('--cost', type=float, nargs='+', help='Per-source cost vector.')
        parser.add_argument('--beta', type=float, help='True target; estimated from the full tables when omitted.')
        parser.add_argument('--policies', nargs='+', default=['oracle_eta_hat', 'etc', 'etg'], choices=POLICY_KINDS)
        parser.add_argument('--kappa', type=float, nargs='+', help='Allocation of the fixed policy (default uniform).')
        parser.add_argument('--e', type=float, default=0.1, help='Exploration fraction of the exploring policies.')
        limits = parser.add_mutually_exclusive_group()
        limits.add_argument('--horizons', type=int, nargs='+', help='Query counts.')
        limits.add_argument('--budgets', type=float, nargs='+', help='Budgets (budget mode).')
        parser.add_argument('--num-runs', type=int, help='Runs per cell.')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--name', default='replay')
        parser.add_argument('--jobs', type=int, default=1)
        parser.add_argument('--out', help='Output directory (default: RESULTS_DIR/<name>).')

    def run_command(self, model, sources, cost=None, beta=None, policies=(), kappa=None, e=0.1, horizons=None,
                    budgets=None, num_runs=None, seed=0, name='replay', jobs=1, out=None, **options):
        num_sources = get_model(model).num_sources
        scenario = {'family': 'replay', 'name': name, 'model': model, 'sources': [{'path': path} for path in sources]}
        if cost is not None:
            scenario['cost'] = cost
        if beta is not None:
            scenario['truth'] = {'beta': beta}
        document = {
            'name': name,
            'scenario': scenario,
            'policies': [self._policy(kind, kappa or [1 / num_sources] * num_sources, e) for kind in policies],
            'seed': seed,
        }
        if horizons:
            document['horizons'] = horizons
        if budgets:
            document['budgets'] = budgets
        if num_runs:
            document['num_runs'] = num_runs
        serializer = ExperimentConfigSerializer(data=document)
        serializer.is_valid(raise_exception=True)
        experiment = serializer.save()

        truth = load_scenario(experiment).truth
        self.stdout.write(f"beta*={truth.beta:.6g}, κ*=({', '.join(f'{value:.4f}' for value in truth.kappa_star)})")
        result = run_experiment(experiment, jobs=jobs)
        out = Path(out) if out else Path(oms_settings.RESULTS_DIR) / experiment.name
        metrics_path, runs_path = write_results(result, out)
        self.success(f"Wrote {metrics_path} and {runs_path}.")

    @staticmethod
    def _policy(kind, kappa, e):
        policy = {'kind': kind}
        if kind == 'fixed':
            policy['kappa'] = kappa
        if kind in EXPLORING_KINDS:
            policy['e'] = e
        return policy
