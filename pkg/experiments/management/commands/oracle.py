"""
``manage.py oracle --scenario NAME [--<param> VALUE ...]``: oracle allocation
and its asymptotic variance by grid search.
"""

import json

from rest_framework.exceptions import ValidationError

from experiments.management.base import OMSCommand
from experiments.serializers import ScenarioSerializer
from oms.allocation import oracle_allocation
from oms.exceptions import ConfigurationError
from oms.sources import FAMILIES

PARAMETERS = sorted({name for family in FAMILIES.values() for name in family.defaults})


def compute_oracle(document, cost_weighted=False, resolution=None, mc_samples=None):
    """
    Validate a scenario document and return (kappa*, V*(kappa*)).
    """
    serializer = ScenarioSerializer(data=document)
    serializer.is_valid(raise_exception=True)
    scenario = serializer.scenario
    if document.get('family') == 'replay':
        raise ConfigurationError('Replay scenarios have no population oracle; use the replay command.')
    return oracle_allocation(scenario, cost_weighted=cost_weighted, resolution=resolution, mc_samples=mc_samples)


def format_oracle(kappa, variance):
    return f"κ*=({', '.join(f'{value:.4f}' for value in kappa)}), V*={variance:.4f}"


class Command(OMSCommand):
    help = 'Print the oracle allocation kappa* and V*(kappa*) of a scenario.'

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--scenario', help=f"Scenario family: {', '.join(sorted(FAMILIES))} or an alias.")
        source.add_argument('--config', help='Scenario document (JSON).')
        for name in PARAMETERS:
            parser.add_argument(f'--{name}', type=float, help='Family parameter.')
        parser.add_argument('--cost', type=float, nargs='+', help='Per-source cost vector.')
        parser.add_argument('--cost-weighted', action='store_true', help='Minimize V(kappa) * kappa^T c.')
        parser.add_argument('--resolution', type=float, help='Simplex grid resolution.')
        parser.add_argument('--mc-samples', type=int, help='Monte Carlo draws per source when no closed form exists.')

    def run_command(self, scenario=None, config=None, cost=None, cost_weighted=False, resolution=None,
                    mc_samples=None, **options):
        if config:
            try:
                with open(config) as handle:
                    document = json.load(handle)
            except (OSError, ValueError) as exc:
                raise ConfigurationError(f"Cannot read scenario '{config}': {exc}")
        else:
            params = {name: options[name] for name in PARAMETERS if options.get(name) is not None}
            document = {'family': scenario, 'params': params}
        if not isinstance(document, dict):
            raise ValidationError('A scenario document must be a JSON object.')
        if cost is not None:
            document['cost'] = cost
        kappa, variance = compute_oracle(document, cost_weighted, resolution, mc_samples)
        self.stdout.write(format_oracle(kappa, variance))
