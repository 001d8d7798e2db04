"""
Per-run simulation: scenario loading, replay ground truth and one seeded run
of one cell.

Everything here runs inside joblib workers, which import this module without
an app registry, so it reaches the library and the frozen configuration only
and never the ORM or the serializers.
"""

import json
import logging
from dataclasses import replace
from functools import lru_cache

import numpy as np

from oms.allocation import estimate_oracle_simplex
from oms.exceptions import ConfigurationError, OMSError
from oms.gmm import MomentLog, two_step_estimate
from oms.nuisance import NuisanceSpec, fit, untrained_snapshot
from oms.policies import run_policy
from oms.sources import Truth, build_scenario
from oms.variance import build_surface

logger = logging.getLogger(__name__)


def _replay_records(scenario, snapshot):
    log = MomentLog(scenario.model)
    for d, sampler in enumerate(scenario.samplers):
        for i in range(sampler.num_rows):
            log.append(d, {name: float(values[i]) for name, values in sampler.table.items()}, snapshot, scenario.cost[d])
    return log


def estimate_replay_truth(scenario, nuisance=None):
    """
    Ground truth of a replay scenario from its full tables: nuisances fit on
    every row, two-step GMM over every row, and the oracle simplex of the
    resulting surface (cost weighted when costs differ). Truth values given in
    the configuration are kept.

    Returns:
        Scenario: ``scenario`` with its truth filled in.
    """
    model = scenario.model
    nuisance = nuisance or NuisanceSpec(kind='linear')
    fitted = fit(_replay_records(scenario, untrained_snapshot(model)), model, nuisance)
    # full-sample nuisances bound to every row
    log = _replay_records(scenario, replace(fitted, snapshot_id=0, trained_on=0))
    estimate = two_step_estimate(log)
    cost_weighted = not scenario.uniform_cost
    kappa = estimate_oracle_simplex(
        build_surface(log, estimate.theta), cost=scenario.cost if cost_weighted else None)
    known = scenario.truth or Truth()
    truth = Truth(
        theta=known.theta if known.theta is not None else estimate.theta,
        beta=known.beta if known.beta is not None else estimate.beta,
        kappa_star=known.kappa_star if known.kappa_star is not None else kappa,
        cost_weighted=known.cost_weighted if known.kappa_star is not None else cost_weighted,
    )
    logger.info('Replay truth of %s: beta=%.6g, kappa*=%s.', scenario.name, truth.beta, np.round(truth.kappa_star, 4))
    return replace(scenario, truth=truth)


@lru_cache(maxsize=8)
def _scenario(key):
    document = json.loads(key)
    scenario = build_scenario(document)
    truth = scenario.truth
    if document.get('family') == 'replay' and (truth is None or truth.beta is None or truth.kappa_star is None):
        scenario = estimate_replay_truth(scenario)
    return scenario


def load_scenario(config):
    """Scenario of ``config``, built once per process."""
    return _scenario(config.scenario_key)


def _checkpoint(record, beta):
    covered = record['beta'] is not None and record['ci_low'] <= beta <= record['ci_high']
    confseq_covered = (record['beta'] is not None and record['confseq_radius'] is not None
                       and abs(record['beta'] - beta) <= record['confseq_radius'])
    return {**record, 'covered': bool(covered), 'confseq_covered': bool(confseq_covered)}


def summarize(trajectory, beta, record):
    """Fill a run record from a trajectory and the true target."""
    checkpoints = [_checkpoint(checkpoint, beta) for checkpoint in trajectory.checkpoints]
    final = checkpoints[-1]
    estimated = final['beta'] is not None
    record.update(
        beta_hat=final['beta'],
        squared_error=(final['beta'] - beta) ** 2 if estimated else None,
        ci_low=final['ci_low'],
        ci_high=final['ci_high'],
        ci_size=final['ci_high'] - final['ci_low'] if estimated else None,
        covered=final['covered'],
        confseq_radius=final['confseq_radius'],
        confseq_covered=all(checkpoint['confseq_covered'] for checkpoint in checkpoints),
        kappa=final['kappa'],
        budget_spent=trajectory.log.budget_spent,
        num_queries=len(trajectory.log),
        flags=dict(sorted(trajectory.flags.items())),
        checkpoints=checkpoints,
    )
    return record


def run_single(config, spec, limit, run):
    """
    One seeded run of one cell. Library errors (bad configuration, a
    degenerate oracle surface, an unidentified replay) are recorded in the
    record's ``failure`` as ``'<ErrorType>: <message>'`` instead of raised.
    """
    record = {
        'policy': spec.name, 'kind': spec.kind, 'scenario': '', 'mode': config.mode,
        'horizon': float(limit), 'run': run, 'beta_true': None, 'beta_hat': None, 'squared_error': None,
        'ci_low': None, 'ci_high': None, 'ci_size': None, 'covered': False,
        'confseq_radius': None, 'confseq_covered': False, 'kappa': None, 'budget_spent': None,
        'num_queries': 0, 'flags': {}, 'checkpoints': [], 'failure': '',
    }
    try:
        scenario = load_scenario(config)
        record['scenario'] = scenario.name
        if scenario.truth is None or scenario.truth.beta is None:
            raise ConfigurationError(f"Scenario '{scenario.name}' has no true target.")
        record['beta_true'] = float(scenario.truth.beta)
        limits = {'horizon': int(limit)} if config.mode == 'horizon' else {'budget': float(limit)}
        trajectory = run_policy(
            spec, scenario, seed=config.seed, run=run, nuisance=config.nuisance,
            inference=config.inference, checkpoint_every=config.checkpoint_every, **limits)
    except OMSError as exc:
        record['failure'] = f'{type(exc).__name__}: {exc}'
        return record
    return summarize(trajectory, record['beta_true'], record)
