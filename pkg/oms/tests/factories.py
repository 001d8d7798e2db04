"""
Builders shared by the oms test modules.
"""

import numpy as np

from oms.exceptions import EndOfRun
from oms.gmm import MomentLog
from oms.moments import Coordinate, Moment, MomentModel
from oms.nuisance import oracle_nuisance, untrained_snapshot
from oms.sources import stream


def mean_model():
    """psi = Y - beta from a single source."""
    return MomentModel(
        name='mean',
        param_names=('beta',),
        moments=(Moment('mean', ('Y',), lambda batch, eta: (batch['Y'], 1.0), Coordinate(0)),),
        source_variables=(('Y',),),
        mask_table=[[1]],
        theta_box=[[-50.0, 50.0]],
    )


def default_snapshot(scenario):
    if scenario.model.slots:
        return oracle_nuisance(scenario)
    return untrained_snapshot(scenario.model)


def log_from_records(model, records, snapshot=None):
    """
    Log of (source, sample) pairs bound to ``snapshot`` (constant predictors by default).
    """
    snapshot = snapshot or untrained_snapshot(model)
    log = MomentLog(model)
    for source, sample in records:
        log.append(source, sample, snapshot)
    return log


def draw_records(scenario, counts, seed=0, run=0):
    records = []
    for d, n in enumerate(counts):
        if not n:
            continue
        batch = scenario.samplers[d](stream(seed, run, d), int(n))
        for i in range(int(n)):
            records.append((d, {name: float(values[i]) for name, values in batch.items()}))
    return records


def draw_log(scenario, counts, seed=0, run=0, snapshot=None):
    """
    Log holding ``counts[d]`` draws from every source d, bound to the oracle
    nuisances when the model has slots.
    """
    return log_from_records(
        scenario.model, draw_records(scenario, counts, seed, run), snapshot or default_snapshot(scenario))


def drive(policy, k_hat=None, limit=10 ** 6):
    """
    Step a policy to the end of its horizon, answering every re-plan with ``k_hat``.
    """
    sequence = []
    for _ in range(limit):
        if policy.replan_due():
            policy.replan(None if k_hat is None else np.asarray(k_hat, dtype=float))
        try:
            source = policy.next_source()
        except EndOfRun:
            break
        policy.record(source)
        sequence.append(source)
    return sequence
