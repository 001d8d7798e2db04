"""
Validated experiment configuration.
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

from oms.inference import InferenceSpec
from oms.nuisance import NuisanceSpec


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Attributes:
        name (str): Experiment name.
        scenario (dict): Validated scenario document; workers rebuild the scenario from it.
        policies (tuple): PolicySpec per policy, in output order.
        limits (tuple): Horizons (query counts) or budgets, strictly increasing.
        mode (str): 'horizon' or 'budget'.
        num_runs (int): Seeded runs per (policy, limit) cell.
        seed (int): Base seed; run r of every cell uses the streams of (seed, r).
        checkpoint_every (int | None): Checkpoint interval in queries.
        nuisance (NuisanceSpec): Nuisance estimation options.
        inference (InferenceSpec): Interval and confidence sequence options.
        output (dict): File names of the metrics table and the per-run records.
        document (dict): The configuration document as given.
    """
    name: str
    scenario: dict
    policies: Tuple
    limits: Tuple
    mode: str = 'horizon'
    num_runs: int = 1
    seed: int = 0
    checkpoint_every: Optional[int] = None
    nuisance: NuisanceSpec = field(default_factory=NuisanceSpec)
    inference: InferenceSpec = field(default_factory=InferenceSpec)
    output: dict = field(default_factory=lambda: {'metrics': 'metrics.csv', 'runs': 'runs.json'})
    document: dict = field(default_factory=dict)

    @property
    def cells(self):
        return [(spec, limit) for spec in self.policies for limit in self.limits]

    @property
    def scenario_key(self):
        return json.dumps(self.scenario, sort_keys=True)
