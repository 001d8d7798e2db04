"""
Two-step GMM over logged histories.

Classes:

MomentLog: Ordered record of (source, sample, cost, nuisance snapshot).
GmmFit: Result of ``two_step_estimate``.

Functions:

moment_average: Sample average of the masked moments.
moment_values: Per-record masked moments.
jacobian_average: Sample average of the moment Jacobian.
weight_matrix: Regularized inverse of a moment covariance.
two_step_estimate: One-step then efficient two-step estimate.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from oms.conf import oms_settings
from oms.exceptions import UnderIdentificationError

logger = logging.getLogger(__name__)


class MomentLog:
    """
    History of a run. Moment pieces are evaluated once per record with the
    snapshot bound at append time and cached.

    Attributes:
        model (MomentModel): The moment model.
        sources (list): Source index of each record.
        samples (list): Sample dict of each record.
        snapshot_ids (list): Snapshot id bound to each record.
        costs (list): Cost paid for each record.
    """

    def __init__(self, model):
        self.model = model
        self.sources = []
        self.samples = []
        self.snapshot_ids = []
        self.costs = []
        self.snapshots = {}
        self._counts = np.zeros(model.num_sources, dtype=int)
        self._columns = [defaultdict(list) for _ in range(model.num_sources)]
        self._a = np.zeros((0, model.num_moments))
        self._b = np.zeros((0, model.num_moments))

    def __len__(self):
        return len(self.sources)

    def append(self, source, sample, snapshot, cost=1.0):
        t = len(self) + 1
        if snapshot.trained_on > t - 1:
            raise ValueError(f"Snapshot trained on {snapshot.trained_on} records cannot be bound at time {t}.")
        self.model.mask(source)
        self.sources.append(source)
        self.samples.append(sample)
        self.snapshot_ids.append(snapshot.snapshot_id)
        self.costs.append(float(cost))
        self.snapshots.setdefault(snapshot.snapshot_id, snapshot)
        self._counts[source] += 1
        columns = self._columns[source]
        for name, value in sample.items():
            columns[name].append(value)

    @property
    def counts(self):
        return self._counts.copy()

    @property
    def kappa(self):
        return self._counts / len(self)

    @property
    def budget_spent(self):
        return float(sum(self.costs))

    def moment_counts(self):
        """Number of records selecting each moment."""
        return self._counts @ self.model.mask_table

    def training_batch(self, variables):
        """
        Column batch of every record whose source emits all of ``variables``.
        """
        parts = [
            columns for d, columns in enumerate(self._columns)
            if self._counts[d] and set(variables) <= set(self.model.source_variables[d])
        ]
        if not parts:
            return {}
        return {name: np.concatenate([np.asarray(part[name], dtype=float) for part in parts]) for name in variables}

    def pieces(self):
        """
        Theta-free pieces (a, b) of every record, each of shape (T, M).
        """
        start = len(self._a)
        if start < len(self):
            groups = defaultdict(list)
            for index in range(start, len(self)):
                groups[self.sources[index], self.snapshot_ids[index]].append(index)
            a = np.zeros((len(self) - start, self.model.num_moments))
            b = np.zeros_like(a)
            for (source, snapshot_id), indices in groups.items():
                names = self.samples[indices[0]].keys()
                batch = {name: np.array([self.samples[i][name] for i in indices]) for name in names}
                rows = np.asarray(indices) - start
                a[rows], b[rows] = self.model.prepare(
                    batch, self.snapshots[snapshot_id], active=self.model.mask(source).astype(bool))
            self._a = np.vstack([self._a, a])
            self._b = np.vstack([self._b, b])
        return self._a, self._b


def moment_values(log, theta):
    """(T, M) masked moments g_t(theta, eta_{t-1})."""
    return log.model.evaluate(log.pieces(), theta)


def moment_average(log, theta):
    return moment_values(log, theta).mean(axis=0)


def jacobian_average(log, theta):
    """(M, D) average derivative of the masked moments."""
    a, b = log.pieces()
    means = (a.mean(axis=0, keepdims=True), b.mean(axis=0, keepdims=True))
    return log.model.evaluate_jacobian(means, theta)[0]


def covariance(log, theta):
    """Symmetrized (1/T) sum g_t g_t^T."""
    values = moment_values(log, theta)
    omega = values.T @ values / len(values)
    return (omega + omega.T) / 2


def weight_matrix(omega, ridge=None, singular_condition=None):
    """
    Inverse of ``omega``, adding ridge * trace / M to the diagonal first when
    omega is ill-conditioned.

    Returns:
        tuple: (weight, ridge_applied, condition_number)
    """
    ridge = float(oms_settings.resolve(ridge, 'RIDGE'))
    singular_condition = float(oms_settings.resolve(singular_condition, 'SINGULAR_CONDITION'))
    omega = (omega + omega.T) / 2
    condition = np.linalg.cond(omega)
    applied = not np.isfinite(condition) or condition > singular_condition
    if not applied:
        try:
            factor = linalg.cho_factor(omega)
        except linalg.LinAlgError:
            applied = True
    if applied:
        size = len(omega)
        scale = np.trace(omega) / size
        omega = omega + ridge * (scale if scale > 0 else 1.0) * np.eye(size)
        factor = linalg.cho_factor(omega)
    weight = linalg.cho_solve(factor, np.eye(len(omega)))
    return (weight + weight.T) / 2, applied, float(condition)


@dataclass
class GmmFit:
    """
    Attributes:
        theta_os (ndarray): One-step estimate under identity weighting.
        theta (ndarray): Two-step estimate.
        beta (float): Target at the two-step estimate.
        weight (ndarray): Second-step weight matrix.
        objective_value (float): Second-step objective at ``theta``.
        diagnostics (dict): Condition numbers, evaluation counts and flags.
    """
    theta_os: np.ndarray
    theta: np.ndarray
    beta: float
    weight: np.ndarray
    objective_value: float
    diagnostics: dict = field(default_factory=dict)


def objective(log, theta, weight):
    average = moment_average(log, theta)
    return float(average @ weight @ average)


def _multistart(box, warm_start=None):
    center = box.mean(axis=1)
    quarter = (box[:, 1] - box[:, 0]) / 4
    starts = [center]
    for j in range(len(center)):
        for sign in (-1, 1):
            start = center.copy()
            start[j] += sign * quarter[j]
            starts.append(start)
    if warm_start is not None and np.all(np.isfinite(warm_start)):
        starts.append(np.clip(warm_start, box[:, 0], box[:, 1]))
    return starts


def _minimize(model, means, weight, warm_start=None):
    """
    Minimize gbar(theta)^T W gbar(theta) over the model's box.

    Returns:
        tuple: (theta, function evaluations, boundary hit)
    """
    box = model.theta_box
    root = linalg.cholesky(weight, lower=True)

    def residual(theta):
        return root.T @ model.evaluate(means, theta)[0]

    def jacobian(theta):
        return root.T @ model.evaluate_jacobian(means, theta)[0]

    tolerance = 1e-8 * (box[:, 1] - box[:, 0])
    if model.affine:
        origin = np.zeros(model.num_params)
        theta = linalg.lstsq(jacobian(origin), -residual(origin))[0]
        clipped = model.clip(theta)
        return clipped, 1, bool(np.any(np.abs(clipped - theta) > 0))

    best, best_value, evaluations = None, np.inf, 0
    for start in _multistart(box, warm_start):
        result = optimize.least_squares(
            residual, start, jac=jacobian, bounds=(box[:, 0], box[:, 1]), method='trf',
            xtol=float(oms_settings.GN_STEP_TOL), ftol=1e-15, gtol=1e-15,
            max_nfev=int(oms_settings.GN_MAX_ITER),
        )
        evaluations += result.nfev
        value = float(result.fun @ result.fun)
        if value < best_value:
            best, best_value = result.x, value
    hit = bool(np.any((best - box[:, 0] < tolerance) | (box[:, 1] - best < tolerance)))
    return best, evaluations, hit


def check_identification(log):
    counts = log.moment_counts()
    for i, count in enumerate(counts):
        if count == 0:
            raise UnderIdentificationError(i, log.model.moment_names[i])


def two_step_estimate(log, warm_start=None):
    """
    Two-step GMM estimate from a moment log.

    Step one minimizes the objective with identity weighting; step two weights
    with the inverse moment covariance at the one-step estimate.

    Raises:
        UnderIdentificationError: If some moment has no selected records.
    """
    model = log.model
    check_identification(log)
    a, b = log.pieces()
    means = (a.mean(axis=0, keepdims=True), b.mean(axis=0, keepdims=True))

    identity = np.eye(model.num_moments)
    theta_os, first_evaluations, _ = _minimize(model, means, identity, warm_start)
    weight, ridge_applied, omega_condition = weight_matrix(covariance(log, theta_os))
    theta, second_evaluations, boundary_hit = _minimize(model, means, weight, warm_start=theta_os)
    if ridge_applied:
        logger.debug('Ridge added to the moment covariance (condition %.3g).', omega_condition)
    return GmmFit(
        theta_os=theta_os,
        theta=theta,
        beta=model.f_tar(theta),
        weight=weight,
        objective_value=objective(log, theta, weight),
        diagnostics={
            'omega_condition': omega_condition,
            'weight_condition': float(np.linalg.cond(weight)),
            'evaluations': first_evaluations + second_evaluations,
            'ridge_applied': ridge_applied,
            'boundary_hit': boundary_hit,
        },
    )
