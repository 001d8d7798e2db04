"""
Sequentially trained nuisance estimators.

Nuisances are refit from past records only. Each fit produces an immutable
``NuisanceSnapshot``; a record logged at time t is bound to the latest
snapshot trained on at most t - 1 records.

Classes:

NuisanceSpec: Nuisance configuration of a run.
RefitSchedule: When refits happen.
NuisanceSnapshot: Fitted predictors for every slot of a model.
NuisanceTracker: Owns the snapshots of one run.

Functions:

fit_slot: Fit one slot on a column batch.
fit: Fit every slot of a model on a moment log.
snapshot_for: Prequential snapshot lookup.
oracle_nuisance: Wrap a scenario's true nuisances.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.kernel_approximation import RBFSampler
from sklearn.linear_model import LogisticRegression, Ridge
from sklearn.pipeline import make_pipeline

from oms.conf import oms_settings
from oms.exceptions import ConfigurationError, UnsupportedModelError
from oms.moments import FrontdoorTables, columns

logger = logging.getLogger(__name__)

NUISANCE_KINDS = ('oracle', 'linear', 'ridge_rff')


@dataclass(frozen=True)
class RefitSchedule:
    """
    Refit policy. ``every_k`` refits after every k-th record; both modes refit
    at re-planning boundaries.
    """
    mode: str = 'every_k'
    k: int = 100

    def __post_init__(self):
        if self.mode not in ('every_k', 'every_batch'):
            raise ConfigurationError(f"Unknown refit mode '{self.mode}'.")
        if self.k < 1:
            raise ConfigurationError('Refit interval must be a positive integer.')

    def due(self, t, boundary=False):
        if boundary:
            return True
        return self.mode == 'every_k' and t > 0 and t % self.k == 0


@dataclass(frozen=True)
class NuisanceSpec:
    """
    Attributes:
        kind (str): 'oracle', 'linear' or 'ridge_rff'.
        refit_every (int | str | None): Refit interval in records, or 'batch'.
        ridge_lambda (float | None): Ridge penalty of the ridge_rff option.
        clamp (float | None): Propensity clamp p_min.
        rff_features (int | None): Random Fourier features of the ridge_rff option.
        rff_bandwidth (float | None): Kernel bandwidth of the ridge_rff option.
    """
    kind: str = 'linear'
    refit_every: object = None
    ridge_lambda: float = None
    clamp: float = None
    rff_features: int = None
    rff_bandwidth: float = None

    def __post_init__(self):
        if self.kind not in NUISANCE_KINDS:
            raise ConfigurationError(f"Unknown nuisance kind '{self.kind}'. Choose one of {NUISANCE_KINDS}.")

    @property
    def schedule(self):
        if self.refit_every == 'batch':
            return RefitSchedule(mode='every_batch', k=1)
        return RefitSchedule(mode='every_k', k=int(oms_settings.resolve(self.refit_every, 'REFIT_EVERY')))

    @property
    def propensity_clamp(self):
        return float(oms_settings.resolve(self.clamp, 'PROPENSITY_CLAMP'))


class ConstantPropensity:
    def __init__(self, value=0.5):
        self.value = value

    def __call__(self, covariates):
        return np.full(len(covariates), self.value)


class ConstantRegression:
    def __call__(self, treatment, covariates):
        return np.zeros(len(treatment))


class ClampedPropensity:
    """
    Propensity predictor with outputs clipped to [clamp, 1 - clamp].

    ``function`` maps an (n, k) covariate matrix to probabilities; it is either
    a fitted scikit-learn classifier or a true propensity.
    """

    def __init__(self, function, clamp):
        self.function = function
        self.clamp = clamp

    def __call__(self, covariates):
        covariates = np.asarray(covariates, dtype=float)
        if hasattr(self.function, 'predict_proba'):
            if covariates.shape[1] == 0:
                covariates = np.zeros((len(covariates), 1))
            values = self.function.predict_proba(covariates)[:, 1]
        else:
            values = self.function(covariates)
        return np.clip(values, self.clamp, 1 - self.clamp)


class FittedRegression:
    """
    Regression predictor (z, W) -> E[R | z, W] backed by a scikit-learn regressor
    on the design [z, W].
    """

    def __init__(self, estimator):
        self.estimator = estimator

    def __call__(self, treatment, covariates):
        design = np.column_stack([np.asarray(treatment, dtype=float), covariates])
        return self.estimator.predict(design)


def untrained_predictor(slot):
    if slot.kind == 'propensity':
        return ConstantPropensity(0.5)
    if slot.kind == 'regression':
        return ConstantRegression()
    return FrontdoorTables(
        mediator=np.full((2, 2), 0.5), outcome=np.zeros((2, 2)), treatment=np.full(2, 0.5))


def _regressor(spec):
    if spec.kind == 'ridge_rff':
        return make_pipeline(_fourier_features(spec), Ridge(alpha=float(oms_settings.resolve(spec.ridge_lambda, 'RIDGE_LAMBDA'))))
    return Ridge(alpha=float(oms_settings.RIDGE))


def _classifier(spec):
    if spec.kind == 'ridge_rff':
        penalty = float(oms_settings.resolve(spec.ridge_lambda, 'RIDGE_LAMBDA'))
        return make_pipeline(
            _fourier_features(spec),
            LogisticRegression(C=1.0 / penalty, solver='newton-cg', tol=1e-10, max_iter=100))
    return LogisticRegression(penalty=None, solver='newton-cg', tol=1e-10, max_iter=100)


def _fourier_features(spec):
    bandwidth = float(oms_settings.resolve(spec.rff_bandwidth, 'RFF_BANDWIDTH'))
    return RBFSampler(
        gamma=1.0 / (2 * bandwidth ** 2),
        n_components=int(oms_settings.resolve(spec.rff_features, 'RFF_FEATURES')),
        random_state=0,
    )


def _fit_frontdoor(batch, slot):
    x = batch[slot.treatment]
    m = batch[slot.mediator]
    y = batch[slot.outcome]
    if not (np.isin(x, (0.0, 1.0)).all() and np.isin(m, (0.0, 1.0)).all()):
        raise UnsupportedModelError('Frontdoor tables need binary treatment and mediator.')
    x = x.astype(int)
    m = m.astype(int)
    counts = np.zeros((2, 2))
    np.add.at(counts, (x, m), 1)
    sums = np.zeros((2, 2))
    np.add.at(sums, (x, m), y)
    per_treatment = counts.sum(axis=1)
    outcome = np.where(counts > 0, sums / np.maximum(counts, 1), y.mean())
    return FrontdoorTables(
        mediator=(counts + 1) / (per_treatment[:, None] + 2),
        outcome=outcome,
        treatment=(per_treatment + 1) / (len(x) + 2),
    )


def fit_slot(batch, slot, spec):
    """
    Fit one nuisance slot.

    Args:
        batch (dict): Column batch holding the slot's variables.
        slot (NuisanceSlot): The slot to fit.
        spec (NuisanceSpec): Estimator options.

    Returns:
        The fitted predictor, or None when the batch is too small
        (fewer rows than regression features plus one, or a single treatment class).
    """
    n = len(batch[slot.treatment]) if slot.treatment in batch else 0
    if slot.kind == 'frontdoor':
        return _fit_frontdoor(batch, slot) if n >= 2 else None

    covariates = columns(batch, slot.covariates)
    treatment = batch[slot.treatment]
    if slot.kind == 'propensity':
        if n < covariates.shape[1] + 2 or np.unique(treatment).size < 2:
            return None
        design = covariates if covariates.shape[1] else np.zeros((n, 1))
        estimator = _classifier(spec)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', ConvergenceWarning)
            warnings.simplefilter('ignore', RuntimeWarning)
            estimator.fit(design, treatment.astype(int))
        return ClampedPropensity(estimator, spec.propensity_clamp)

    design = np.column_stack([treatment, covariates])
    if n < design.shape[1] + 1:
        return None
    estimator = _regressor(spec)
    estimator.fit(design, batch[slot.outcome])
    return FittedRegression(estimator)


@dataclass(frozen=True)
class NuisanceSnapshot:
    """
    Immutable set of fitted nuisance predictors.

    Attributes:
        snapshot_id (int): Position in the run's snapshot sequence.
        trained_on (int): Number of records the fit used.
        predictors (dict): Slot name -> predictor.
        untrained (frozenset): Slots still holding constant predictors.
        oracle (bool): True for the true-nuisance snapshot.
    """
    snapshot_id: int
    trained_on: int
    predictors: Mapping[str, object] = field(default_factory=dict)
    untrained: frozenset = frozenset()
    oracle: bool = False

    def slot(self, name):
        try:
            return self.predictors[name]
        except KeyError:
            raise ConfigurationError(f"Nuisance snapshot has no slot '{name}'.")


def untrained_snapshot(model):
    predictors = {slot.name: untrained_predictor(slot) for slot in model.slots}
    return NuisanceSnapshot(0, 0, predictors, untrained=frozenset(predictors))


def fit(log, model, spec, previous=None, snapshot_id=None):
    """
    Fit every slot of ``model`` on the records of ``log``.

    Slots with too little data keep the predictor of ``previous`` (or a constant)
    and are listed in ``untrained`` when they have never been fit.
    """
    previous = previous or untrained_snapshot(model)
    predictors = {}
    untrained = set()
    for slot in model.slots:
        batch = log.training_batch(slot.variables)
        fitted = fit_slot(batch, slot, spec) if batch else None
        if fitted is None:
            predictors[slot.name] = previous.predictors.get(slot.name, untrained_predictor(slot))
            if slot.name in previous.untrained or slot.name not in previous.predictors:
                untrained.add(slot.name)
        else:
            predictors[slot.name] = fitted
    snapshot_id = previous.snapshot_id + 1 if snapshot_id is None else snapshot_id
    return NuisanceSnapshot(snapshot_id, len(log), predictors, untrained=frozenset(untrained))


def snapshot_for(t, snapshots):
    """
    Latest snapshot trained on at most t - 1 records.
    """
    if t < 1:
        raise ValueError('Time index must be at least 1.')
    eligible = [snapshot for snapshot in snapshots if snapshot.trained_on <= t - 1]
    return max(eligible, key=lambda snapshot: snapshot.snapshot_id)


def oracle_nuisance(scenario):
    """
    Wrap the scenario's true nuisance functions as a snapshot that is never refit.

    Raises:
        ConfigurationError: When the scenario has no truth or lacks a slot.
    """
    truth = scenario.truth
    if truth is None or truth.nuisances is None:
        raise ConfigurationError(f"Scenario '{scenario.name}' has no oracle nuisances.")
    clamp = float(oms_settings.PROPENSITY_CLAMP)
    predictors = {}
    for slot in scenario.model.slots:
        if slot.name not in truth.nuisances:
            raise ConfigurationError(f"Scenario '{scenario.name}' has no true nuisance for slot '{slot.name}'.")
        function = truth.nuisances[slot.name]
        predictors[slot.name] = ClampedPropensity(function, clamp) if slot.kind == 'propensity' else function
    return NuisanceSnapshot(0, 0, predictors, oracle=True)


class NuisanceTracker:
    """
    Snapshot sequence of a single run.
    """

    def __init__(self, model, spec, scenario=None):
        self.model = model
        self.spec = spec
        self.schedule = spec.schedule
        if spec.kind == 'oracle':
            self.snapshots = [oracle_nuisance(scenario)]
        else:
            self.snapshots = [untrained_snapshot(model)]

    @property
    def latest(self):
        return self.snapshots[-1]

    def current(self, t):
        """
        Snapshot to bind to the record logged at time t.
        """
        if self.latest.trained_on <= t - 1:
            return self.latest
        return snapshot_for(t, self.snapshots)

    def refit(self, log, boundary=False):
        """
        Refit when the schedule says so. Returns True if a new snapshot was made.
        """
        if self.spec.kind == 'oracle' or not self.model.slots:
            return False
        t = len(log)
        if t == 0 or self.latest.trained_on == t or not self.schedule.due(t, boundary):
            return False
        snapshot = fit(log, self.model, self.spec, previous=self.latest)
        self.snapshots.append(snapshot)
        logger.debug('Refit nuisances on %d records (snapshot %d).', t, snapshot.snapshot_id)
        return True
