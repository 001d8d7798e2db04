"""
Monte Carlo experiment runner.

Each (policy, horizon) cell runs ``num_runs`` seeded trajectories; run r of
every cell draws from the streams of (seed, r), so adding runs leaves earlier
records unchanged and serial and parallel execution agree. The runs
themselves live in ``experiments.simulation``, the module joblib workers
import.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.db import transaction
from django.utils import timezone
from joblib import Parallel, delayed

from experiments.metrics import aggregate, write_metrics, write_runs
from experiments.models import Experiment, MetricsRecord
from experiments.serializers import ExperimentConfigSerializer
from experiments.simulation import run_single
from oms.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


def load_config(path, seed=None):
    """
    Read and validate an experiment configuration file.

    Raises:
        ConfigurationError: For an unreadable or malformed file.
        ValidationError: For a document the serializers reject.
    """
    try:
        with open(path) as handle:
            document = json.load(handle)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"Cannot read configuration '{path}': {exc}")
    if seed is not None:
        document['seed'] = seed
    serializer = ExperimentConfigSerializer(data=document)
    serializer.is_valid(raise_exception=True)
    return serializer.save()


@dataclass
class ExperimentResult:
    config: object
    records: list
    metrics: list


def run_experiment(config, jobs=1):
    """
    Run every cell of ``config`` and aggregate the metrics table.

    Args:
        config (ExperimentConfig): Validated configuration.
        jobs (int): joblib worker count; records are merged in
            (policy, horizon, run) order whatever the count.

    Returns:
        ExperimentResult
    """
    tasks = [(spec, limit, run) for spec, limit in config.cells for run in range(config.num_runs)]
    logger.info('Experiment %s: %d cells x %d runs on %d worker(s).',
                config.name, len(config.cells), config.num_runs, jobs)
    records = Parallel(n_jobs=jobs)(delayed(run_single)(config, spec, limit, run) for spec, limit, run in tasks)
    metrics = aggregate(records, seed=config.seed)
    for row in metrics:
        if row.failure:
            logger.error('Cell %s @ %g failed: %s', row.policy, row.horizon, row.failure)
        else:
            logger.info('Cell %s @ %g: mse=%.4g, coverage=%.3f.', row.policy, row.horizon, row.mse, row.coverage)
    return ExperimentResult(config=config, records=records, metrics=metrics)


def write_results(result, out_dir):
    """
    Write the metrics CSV and the per-run JSON into ``out_dir``.

    Returns:
        tuple: (metrics path, runs path)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = write_metrics(result.metrics, out_dir / result.config.output['metrics'])
    runs_path = write_runs(result.records, out_dir / result.config.output['runs'])
    logger.info('Wrote %s and %s.', metrics_path, runs_path)
    return metrics_path, runs_path


def _nullable(value):
    return None if value is None or not np.isfinite(value) else float(value)


@transaction.atomic
def store(result):
    """
    Persist an experiment and its metrics table.
    """
    config = result.config
    failed = any(row.failure for row in result.metrics)
    experiment = Experiment.objects.create(
        name=config.name,
        family=config.scenario.get('family', ''),
        mode=config.mode,
        seed=config.seed,
        num_runs=config.num_runs,
        config=config.document,
        status=Experiment.FAILED if failed else Experiment.FINISHED,
        finished_at=timezone.now(),
    )
    MetricsRecord.objects.bulk_create([
        MetricsRecord(
            experiment=experiment,
            policy=row.policy,
            scenario=row.scenario,
            mode=row.mode,
            horizon=row.horizon,
            num_runs=row.num_runs,
            kappa_mean=row.kappa_mean,
            kappa_std=row.kappa_std,
            flags=row.flags,
            failure=row.failure,
            **{name: _nullable(getattr(row, name)) for name in FLOAT_FIELDS},
        )
        for row in result.metrics
    ])
    return experiment


FLOAT_FIELDS = (
    'mse', 'mse_low', 'mse_high', 'scaled_mse',
    'relative_regret_pct', 'relative_regret_low', 'relative_regret_high',
    'coverage', 'coverage_low', 'coverage_high', 'confseq_coverage',
    'mean_ci_size', 'mean_ci_size_low', 'mean_ci_size_high', 'mean_confseq_size',
)
