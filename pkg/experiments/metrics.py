"""
Aggregation of per-run records into the metrics table.

Every aggregate is computed from the per-run records alone, so a saved
``runs.json`` reproduces the table offline. Error bars are 95% percentile
bootstrap intervals over runs.

Classes:

MetricsRow: One (policy, horizon) cell of the table.

Functions:

relative_regret: Percentage excess MSE over the oracle.
bootstrap_interval: Bootstrap 95% interval of a statistic of per-run values.
aggregate: Metrics table from per-run records.
to_frame, write_metrics, read_metrics: Metrics CSV.
write_runs, read_runs: Per-run records JSON.
"""

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd
from rest_framework.renderers import JSONRenderer
from scipy import stats

from experiments.serializers import RunRecordSerializer
from oms.conf import oms_settings
from oms.exceptions import UndefinedMetricError

logger = logging.getLogger(__name__)

# policy kinds used as the regret reference, in order of preference
REFERENCE_KINDS = ('oracle', 'oracle_eta_hat')


@dataclass
class MetricsRow:
    """
    Attributes:
        horizon (float): Query count T in horizon mode, budget B in budget mode.
        scaled_mse (float): T * MSE or B * MSE.
        relative_regret_pct (float): NaN when no oracle cell ran at this horizon.
        coverage (float): Fraction of runs whose final interval covers the truth.
        confseq_coverage (float): Fraction of runs covered at every checkpoint.
        mean_ci_size (float): Mean final interval width.
        mean_confseq_size (float): Mean final confidence sequence width.
        kappa_mean, kappa_std (list): Per-source mean and deviation of the final allocation.
        failure (str): Non-empty when the cell was aborted.
    """
    policy: str
    scenario: str
    mode: str
    horizon: float
    num_runs: int
    mse: float = np.nan
    mse_low: float = np.nan
    mse_high: float = np.nan
    scaled_mse: float = np.nan
    relative_regret_pct: float = np.nan
    relative_regret_low: float = np.nan
    relative_regret_high: float = np.nan
    coverage: float = np.nan
    coverage_low: float = np.nan
    coverage_high: float = np.nan
    confseq_coverage: float = np.nan
    mean_ci_size: float = np.nan
    mean_ci_size_low: float = np.nan
    mean_ci_size_high: float = np.nan
    mean_confseq_size: float = np.nan
    kappa_mean: list = field(default_factory=list)
    kappa_std: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    failure: str = ''


METRICS_COLUMNS = [item.name for item in fields(MetricsRow)]
JSON_COLUMNS = ('kappa_mean', 'kappa_std', 'flags')
TEXT_COLUMNS = ('policy', 'scenario', 'mode', 'failure') + JSON_COLUMNS


def relative_regret(mse_policy, mse_oracle):
    """
    (mse_policy - mse_oracle) / mse_oracle * 100.

    Raises:
        UndefinedMetricError: If ``mse_oracle`` is not positive.
    """
    if not mse_oracle > 0:
        raise UndefinedMetricError('Relative regret is undefined for a zero oracle MSE.')
    return (mse_policy - mse_oracle) / mse_oracle * 100


def _regret_statistic(policy, oracle, axis=-1):
    reference = np.mean(oracle, axis=axis)
    return (np.mean(policy, axis=axis) - reference) / reference * 100


def bootstrap_interval(samples, statistic=np.mean, resamples=None, seed=0):
    """
    Percentile bootstrap 95% interval of ``statistic`` over paired samples.

    Degenerates to the point value for fewer than two runs or constant samples.

    Args:
        samples (tuple): Equal-length arrays, resampled together.
        statistic (callable): Vectorized statistic accepting ``axis``.

    Returns:
        tuple: (low, high)
    """
    samples = tuple(np.asarray(sample, dtype=float) for sample in samples)
    if not len(samples[0]):
        return np.nan, np.nan
    point = float(statistic(*samples, axis=-1))
    if len(samples[0]) < 2 or all(np.ptp(sample) == 0 for sample in samples):
        return point, point
    result = stats.bootstrap(
        samples, statistic,
        n_resamples=int(oms_settings.resolve(resamples, 'BOOTSTRAP_RESAMPLES')),
        confidence_level=0.95, method='percentile', paired=True, vectorized=True,
        random_state=np.random.default_rng(seed),
    )
    return float(result.confidence_interval.low), float(result.confidence_interval.high)


def _values(records, key):
    return np.array([np.nan if record[key] is None else float(record[key]) for record in records])


def _finite(*arrays):
    mask = np.all([np.isfinite(array) for array in arrays], axis=0)
    return tuple(array[mask] for array in arrays)


def _cells(records):
    cells = {}
    for record in records:
        cells.setdefault((record['policy'], float(record['horizon'])), []).append(record)
    for runs in cells.values():
        runs.sort(key=lambda record: record['run'])
    return cells


def _reference(cells, horizon):
    for kind in REFERENCE_KINDS:
        for (_, cell_horizon), runs in cells.items():
            if cell_horizon == horizon and runs[0]['kind'] == kind and not any(run['failure'] for run in runs):
                return runs
    return None


def _summarize(runs, reference, resamples, seed):
    first = runs[0]
    row = MetricsRow(
        policy=first['policy'], scenario=first['scenario'], mode=first['mode'],
        horizon=float(first['horizon']), num_runs=len(runs),
    )
    failures = [run['failure'] for run in runs if run['failure']]
    if failures:
        row.failure = failures[0]
        return row

    errors = _values(runs, 'squared_error')
    row.mse = float(np.nanmean(errors)) if np.isfinite(errors).any() else np.nan
    row.mse_low, row.mse_high = bootstrap_interval(_finite(errors), resamples=resamples, seed=seed)
    row.scaled_mse = row.horizon * row.mse

    covered = np.array([float(run['covered']) for run in runs])
    row.coverage = float(covered.mean())
    row.coverage_low, row.coverage_high = bootstrap_interval((covered,), resamples=resamples, seed=seed)
    row.confseq_coverage = float(np.mean([run['confseq_covered'] for run in runs]))

    sizes = _finite(_values(runs, 'ci_size'))
    if len(sizes[0]):
        row.mean_ci_size = float(sizes[0].mean())
        row.mean_ci_size_low, row.mean_ci_size_high = bootstrap_interval(sizes, resamples=resamples, seed=seed)
    radii = _finite(_values(runs, 'confseq_radius'))[0]
    if len(radii):
        row.mean_confseq_size = float(2 * radii.mean())

    kappas = np.array([run['kappa'] for run in runs], dtype=float)
    row.kappa_mean = kappas.mean(axis=0).tolist()
    row.kappa_std = kappas.std(axis=0).tolist()
    flags = Counter()
    for run in runs:
        flags.update(run['flags'])
    row.flags = dict(sorted(flags.items()))

    if reference is not None and len(reference) == len(runs):
        pairs = _finite(errors, _values(reference, 'squared_error'))
        try:
            row.relative_regret_pct = relative_regret(pairs[0].mean(), pairs[1].mean())
        except UndefinedMetricError as exc:
            logger.warning('%s at %g: %s', row.policy, row.horizon, exc)
        else:
            row.relative_regret_low, row.relative_regret_high = bootstrap_interval(
                pairs, _regret_statistic, resamples=resamples, seed=seed)
    return row


def aggregate(records, resamples=None, seed=0):
    """
    Metrics table of per-run records, one row per (policy, horizon) cell in
    order of first appearance.

    Relative regret is taken against the ``oracle`` cell at the same horizon
    (true nuisances), else the ``oracle_eta_hat`` cell, pairing runs by index.
    """
    cells = _cells(records)
    return [
        _summarize(runs, _reference(cells, horizon), resamples, seed)
        for (_, horizon), runs in cells.items()
    ]


def to_frame(rows):
    """
    DataFrame of metrics rows with list and dict columns encoded as JSON text.
    """
    frame = pd.DataFrame([asdict(row) for row in rows], columns=METRICS_COLUMNS)
    for column in JSON_COLUMNS:
        frame[column] = frame[column].map(lambda value: json.dumps(value, sort_keys=True))
    return _typed(frame)


def _typed(frame):
    numeric = [column for column in METRICS_COLUMNS if column not in TEXT_COLUMNS]
    frame = frame.copy()
    frame[numeric] = frame[numeric].astype(float)
    frame['num_runs'] = frame['num_runs'].astype(int)
    for column in TEXT_COLUMNS:
        frame[column] = frame[column].astype(str)
    return frame


def write_metrics(rows, path):
    frame = rows if isinstance(rows, pd.DataFrame) else to_frame(rows)
    frame.to_csv(path, index=False, float_format='%.17g', na_rep='nan')
    return path


def read_metrics(path):
    frame = pd.read_csv(path, keep_default_na=False, na_values=['nan'], dtype={'failure': str})
    return _typed(frame[METRICS_COLUMNS])


def render_runs(records):
    return JSONRenderer().render(RunRecordSerializer(records, many=True).data)


def write_runs(records, path):
    with open(path, 'wb') as handle:
        handle.write(render_runs(records))
    return path


def read_runs(path):
    with open(path) as handle:
        return json.load(handle)
