"""
``manage.py validate --config PATH``: check a configuration and its datasets without sampling.
"""

from experiments.management.base import OMSCommand
from experiments.runner import load_config


class Command(OMSCommand):
    help = 'Validate an experiment configuration and the schema of any replay CSV files.'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Experiment configuration file (JSON).')

    def run_command(self, config, **options):
        experiment = load_config(config)
        self.success(
            f"Configuration '{experiment.name}' is valid: {len(experiment.cells)} cells x "
            f"{experiment.num_runs} runs ({experiment.mode} mode).")
