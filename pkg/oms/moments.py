"""
Moment models for online moment selection.

A moment model bundles the raw moment vector psi, the per-source selection
mask, the parameter box, the target functional and the nuisance slots the
moments need. Every built-in moment has the product-affine form

    psi_i(sample, theta, eta) = a_i(sample, eta) - b_i(sample, eta) * h_i(theta)

where ``a_i`` and ``b_i`` do not depend on theta and ``h_i`` (a ``Link``) does
not depend on the data. Evaluation is split accordingly: ``prepare`` turns a
column batch and a nuisance snapshot into the theta-free pieces once, and
``evaluate`` / ``evaluate_jacobian`` combine them with any theta.

Classes:

NuisanceSlot: A named nuisance role (propensity, regression, frontdoor tables).
Coordinate, Product, Sum: Links h(theta).
Moment: One product-affine moment condition.
MomentModel: The full model.

Functions:

aipw_score: Augmented inverse propensity weighted influence function.
frontdoor_score: Efficient influence function of the frontdoor functional.
psi, augmented_moments, psi_jacobian, target, target_gradient: Single-sample API.
get_model: Build a built-in model by name.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from oms.conf import oms_settings
from oms.exceptions import ConfigurationError, PositivityError, SchemaError, UnsupportedModelError

Batch = Dict[str, np.ndarray]


def as_batch(sample):
    """
    Convert a single sample (name -> scalar) into a batch of length one.
    """
    return {name: np.atleast_1d(np.asarray(value, dtype=float)) for name, value in sample.items()}


def batch_length(batch):
    for values in batch.values():
        return len(values)
    return 0


def require(batch, names):
    """
    Raise SchemaError naming the first variable in ``names`` missing from ``batch``.
    """
    for name in names:
        if name not in batch:
            raise SchemaError(f"Sample is missing variable '{name}'.", variable=name)


def columns(batch, names):
    """
    Stack the named columns of ``batch`` into an (n, len(names)) matrix.
    """
    require(batch, names)
    if not names:
        return np.zeros((batch_length(batch), 0))
    return np.column_stack([batch[name] for name in names])


@dataclass(frozen=True)
class NuisanceSlot:
    """
    A nuisance role required by one or more moments.

    Attributes:
        name (str): Slot name, unique within a model.
        kind (str): 'propensity', 'regression' or 'frontdoor'.
        treatment (str): Binary treatment / instrument variable.
        covariates (tuple): Covariate names (propensity and regression slots).
        outcome (str | None): Outcome variable of regression and frontdoor slots.
        mediator (str | None): Mediator variable of frontdoor slots.
    """
    name: str
    kind: str
    treatment: str
    covariates: Tuple[str, ...] = ()
    outcome: Optional[str] = None
    mediator: Optional[str] = None

    @property
    def variables(self):
        names = [self.treatment, *self.covariates]
        if self.outcome:
            names.append(self.outcome)
        if self.mediator:
            names.append(self.mediator)
        return tuple(names)


class Coordinate:
    """h(theta) = theta[index]"""
    affine = True

    def __init__(self, index):
        self.index = index

    def value(self, theta):
        return theta[self.index]

    def gradient(self, theta):
        grad = np.zeros(len(theta))
        grad[self.index] = 1.0
        return grad


class Product:
    """h(theta) = theta[first] * theta[second]"""
    affine = False

    def __init__(self, first, second):
        self.first = first
        self.second = second

    def value(self, theta):
        return theta[self.first] * theta[self.second]

    def gradient(self, theta):
        grad = np.zeros(len(theta))
        grad[self.first] += theta[self.second]
        grad[self.second] += theta[self.first]
        return grad


class Sum:
    """h(theta) = sum of the indexed coordinates"""
    affine = True

    def __init__(self, *indices):
        self.indices = indices

    def value(self, theta):
        return sum(theta[index] for index in self.indices)

    def gradient(self, theta):
        grad = np.zeros(len(theta))
        for index in self.indices:
            grad[index] += 1.0
        return grad


@dataclass(frozen=True)
class Moment:
    """
    One moment condition a(sample, eta) - b(sample, eta) * h(theta).

    ``pieces(batch, eta)`` returns the pair (a, b) as arrays (or scalars for b).
    """
    name: str
    variables: Tuple[str, ...]
    pieces: Callable
    link: object
    slots: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class MomentModel:
    """
    Moment conditions, selection masks and parameter space of one estimation problem.

    Attributes:
        name (str): Registry name.
        param_names (tuple): Names of the D parameters; the target is ``param_names[target_index]``.
        moments (tuple): The M moments.
        source_variables (tuple): Variables emitted by each data source.
        mask_table (ndarray): (num_sources, M) binary matrix; row d is m(source d).
        theta_box (ndarray): (D, 2) lower and upper bounds.
        slots (tuple): Nuisance slots used by the moments.
        target_index (int): Coordinate returned by the target functional.
    """
    name: str
    param_names: Tuple[str, ...]
    moments: Tuple[Moment, ...]
    source_variables: Tuple[Tuple[str, ...], ...]
    mask_table: np.ndarray
    theta_box: np.ndarray
    slots: Tuple[NuisanceSlot, ...] = ()
    target_index: int = 0
    options: Mapping = field(default_factory=dict)

    def __post_init__(self):
        mask = np.asarray(self.mask_table, dtype=int)
        box = np.asarray(self.theta_box, dtype=float)
        object.__setattr__(self, 'mask_table', mask)
        object.__setattr__(self, 'theta_box', box)
        if mask.shape != (len(self.source_variables), len(self.moments)):
            raise ConfigurationError('Mask table must have one row per source and one column per moment.')
        if not np.isin(mask, (0, 1)).all():
            raise ConfigurationError('Mask entries must be 0 or 1.')
        if not mask.any(axis=0).all():
            raise ConfigurationError('Every moment needs at least one source that selects it.')
        if box.shape != (len(self.param_names), 2) or not (box[:, 0] < box[:, 1]).all():
            raise ConfigurationError('theta_box must be a nonempty box with one row per parameter.')
        for d, row in enumerate(mask):
            for i in np.flatnonzero(row):
                missing = set(self.moments[i].variables) - set(self.source_variables[d])
                if missing:
                    raise ConfigurationError(
                        f"Source {d} selects moment '{self.moments[i].name}' "
                        f"but does not emit {sorted(missing)}.")

    @property
    def num_moments(self):
        return len(self.moments)

    @property
    def num_params(self):
        return len(self.param_names)

    @property
    def num_sources(self):
        return len(self.source_variables)

    @property
    def moment_names(self):
        return tuple(moment.name for moment in self.moments)

    @property
    def affine(self):
        """True when every moment is affine in theta."""
        return all(moment.link.affine for moment in self.moments)

    def mask(self, source):
        if not 0 <= source < self.num_sources:
            raise ConfigurationError(f"Source index {source} outside [0, {self.num_sources - 1}].")
        return self.mask_table[source]

    def slot(self, name):
        for slot in self.slots:
            if slot.name == name:
                return slot
        raise ConfigurationError(f"Model '{self.name}' has no nuisance slot '{name}'.")

    def center(self):
        return self.theta_box.mean(axis=1)

    def clip(self, theta):
        return np.clip(theta, self.theta_box[:, 0], self.theta_box[:, 1])

    def prepare(self, batch, eta, active=None):
        """
        Evaluate the theta-free pieces (a, b) of every active moment.

        Args:
            batch (dict): Column batch of samples.
            eta: Nuisance snapshot providing the slots the active moments use.
            active (array of bool | None): Moments to evaluate; the rest get a = b = 0.

        Returns:
            tuple: Arrays a and b of shape (n, M).
        """
        n = batch_length(batch)
        active = np.ones(self.num_moments, dtype=bool) if active is None else np.asarray(active, dtype=bool)
        a = np.zeros((n, self.num_moments))
        b = np.zeros((n, self.num_moments))
        for i, moment in enumerate(self.moments):
            if not active[i]:
                continue
            require(batch, moment.variables)
            a_i, b_i = moment.pieces(batch, eta)
            a[:, i] = a_i
            b[:, i] = b_i
        return a, b

    def links(self, theta):
        return np.array([moment.link.value(theta) for moment in self.moments])

    def link_gradients(self, theta):
        return np.vstack([moment.link.gradient(theta) for moment in self.moments])

    def evaluate(self, pieces, theta):
        """(n, M) matrix of moment values."""
        a, b = pieces
        return a - b * self.links(np.asarray(theta, dtype=float))

    def evaluate_jacobian(self, pieces, theta):
        """(n, M, D) tensor of moment derivatives with respect to theta."""
        a, b = pieces
        theta = np.asarray(theta, dtype=float)
        try:
            grads = self.link_gradients(theta)
        except NotImplementedError:
            return finite_difference_jacobian(lambda value: self.evaluate(pieces, value), theta)
        return -b[:, :, None] * grads[None, :, :]

    def f_tar(self, theta):
        return float(theta[self.target_index])

    def f_tar_grad(self, theta):
        grad = np.zeros(self.num_params)
        grad[self.target_index] = 1.0
        return grad


def finite_difference_jacobian(function, theta):
    """
    Central differences of an (n, M)-valued function with step 1e-6 * max(1, |theta_j|).
    """
    theta = np.asarray(theta, dtype=float)
    columns_ = []
    for j in range(len(theta)):
        step = 1e-6 * max(1.0, abs(theta[j]))
        upper = theta.copy()
        lower = theta.copy()
        upper[j] += step
        lower[j] -= step
        columns_.append((function(upper) - function(lower)) / (2 * step))
    return np.stack(columns_, axis=-1)


def aipw_score(covariates, treatment, outcome, propensity, regression):
    """
    Augmented inverse propensity weighted influence function.

    (Z / pi(W) - (1 - Z) / (1 - pi(W))) * (R - mu(Z, W)) + mu(1, W) - mu(0, W)

    Args:
        covariates (ndarray): (n, k) covariate matrix W.
        treatment (ndarray): Binary Z.
        outcome (ndarray): Response R.
        propensity (callable): W -> P(Z = 1 | W).
        regression (callable): (z, W) -> E[R | Z = z, W].

    Returns:
        ndarray: One score per row.

    Raises:
        PositivityError: If any propensity lies outside (0, 1).
    """
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    z = np.asarray(treatment, dtype=float)
    r = np.asarray(outcome, dtype=float)
    pi = np.asarray(propensity(covariates), dtype=float)
    if np.any((pi <= 0) | (pi >= 1)):
        raise PositivityError('Propensity scores must lie strictly inside (0, 1).')
    mu_z = regression(z, covariates)
    mu_1 = regression(np.ones_like(z), covariates)
    mu_0 = regression(np.zeros_like(z), covariates)
    weight = z / pi - (1 - z) / (1 - pi)
    return weight * (r - mu_z) + (mu_1 - mu_0)


@dataclass(frozen=True)
class FrontdoorTables:
    """
    Nuisances of the frontdoor influence function for binary treatment and mediator.

    Attributes:
        mediator (ndarray): (2, 2) table, mediator[x, m] = P(M = m | X = x).
        outcome (ndarray): (2, 2) table, outcome[x, m] = E[Y | X = x, M = m].
        treatment (ndarray): (2,) table, treatment[x] = P(X = x).
    """
    mediator: np.ndarray
    outcome: np.ndarray
    treatment: np.ndarray


def _binary(values, name):
    values = np.asarray(values, dtype=float)
    if not np.isin(values, (0.0, 1.0)).all():
        raise UnsupportedModelError(f"Frontdoor scores need a binary {name}.")
    return values.astype(int)


def frontdoor_score(treatment, mediator, outcome, tables):
    """
    Efficient influence function of the frontdoor functional for binary X and M.

    Args:
        treatment (ndarray): Binary X.
        mediator (ndarray): Binary M.
        outcome (ndarray): Y.
        tables (FrontdoorTables): p_x(m), E[Y | x, m] and p(x).

    Returns:
        ndarray: One score per row.
    """
    x = _binary(treatment, 'treatment')
    m = _binary(mediator, 'mediator')
    y = np.asarray(outcome, dtype=float)
    p_m = np.asarray(tables.mediator, dtype=float)
    e_y = np.asarray(tables.outcome, dtype=float)
    p_x = np.asarray(tables.treatment, dtype=float)
    shift = p_m[1] - p_m[0]
    # marginal[m] = sum_x E[Y | x, m] p(x)
    marginal = e_y.T @ p_x
    residual_term = shift[m] / p_m[x, m] * (y - e_y[x, m])
    mediator_term = (2 * x - 1) / p_x[x] * (marginal[m] - p_m[x] @ marginal)
    plugin_term = e_y[x] @ shift
    return residual_term + mediator_term + plugin_term


def psi(model, sample, theta, eta):
    """
    Raw moment vector of one sample (no mask applied).
    """
    pieces = model.prepare(as_batch(sample), eta)
    return model.evaluate(pieces, theta)[0]


def augmented_moments(model, source, sample, theta, eta):
    """
    Masked moment vector m(source) * psi(sample, theta, eta).

    Coordinates the source does not select are exactly zero and never evaluated.
    """
    active = model.mask(source).astype(bool)
    pieces = model.prepare(as_batch(sample), eta, active=active)
    return model.evaluate(pieces, theta)[0]


def psi_jacobian(model, sample, theta, eta):
    """
    (M, D) derivative of the raw moment vector of one sample.
    """
    pieces = model.prepare(as_batch(sample), eta)
    return model.evaluate_jacobian(pieces, theta)[0]


def target(model, theta):
    return model.f_tar(np.asarray(theta, dtype=float))


def target_gradient(model, theta):
    return model.f_tar_grad(np.asarray(theta, dtype=float))


def _box(num_params, theta_bound):
    bound = float(oms_settings.resolve(theta_bound, 'THETA_BOUND'))
    return np.tile([-bound, bound], (num_params, 1))


def _aipw_pieces(covariates, treatment, outcome, propensity_slot, regression_slot):
    def pieces(batch, eta):
        score = aipw_score(
            columns(batch, covariates),
            batch[treatment],
            batch[outcome],
            eta.slot(propensity_slot),
            eta.slot(regression_slot),
        )
        return score, 1.0
    return pieces


def two_sample_iv(theta_bound=None):
    """
    Linear instrumental variables with the first stage and the reduced form observed
    in different samples: source 0 emits (Z, X), source 1 emits (Z, Y).
    theta = (beta, alpha).
    """
    first_stage = Moment(
        'first_stage', ('Z', 'X'),
        lambda batch, eta: (batch['Z'] * batch['X'], batch['Z'] ** 2),
        Coordinate(1))
    reduced_form = Moment(
        'reduced_form', ('Z', 'Y'),
        lambda batch, eta: (batch['Z'] * batch['Y'], batch['Z'] ** 2),
        Product(0, 1))
    return MomentModel(
        name='two_sample_iv',
        param_names=('beta', 'alpha'),
        moments=(first_stage, reduced_form),
        source_variables=(('Z', 'X'), ('Z', 'Y')),
        mask_table=[[1, 0], [0, 1]],
        theta_box=_box(2, theta_bound),
    )


def two_sample_late(covariates=('W',), theta_bound=None):
    """
    Local average treatment effect from two samples: source 0 emits (W, Z, Y),
    source 1 emits (W, Z, X). theta = (beta, alpha) with alpha the first-stage
    contrast and beta * alpha the reduced-form contrast.
    """
    covariates = tuple(covariates)
    slots = (
        NuisanceSlot('propensity', 'propensity', 'Z', covariates),
        NuisanceSlot('outcome_regression', 'regression', 'Z', covariates, outcome='Y'),
        NuisanceSlot('treatment_regression', 'regression', 'Z', covariates, outcome='X'),
    )
    reduced_form = Moment(
        'reduced_form', (*covariates, 'Z', 'Y'),
        _aipw_pieces(covariates, 'Z', 'Y', 'propensity', 'outcome_regression'),
        Product(0, 1), slots=('propensity', 'outcome_regression'))
    first_stage = Moment(
        'first_stage', (*covariates, 'Z', 'X'),
        _aipw_pieces(covariates, 'Z', 'X', 'propensity', 'treatment_regression'),
        Coordinate(1), slots=('propensity', 'treatment_regression'))
    return MomentModel(
        name='two_sample_late',
        param_names=('beta', 'alpha'),
        moments=(reduced_form, first_stage),
        source_variables=((*covariates, 'Z', 'Y'), (*covariates, 'Z', 'X')),
        mask_table=[[1, 0], [0, 1]],
        theta_box=_box(2, theta_bound),
        slots=slots,
        options={'covariates': covariates},
    )


def confounder_mediator(covariates=('W',), theta_bound=None):
    """
    Average treatment effect identified by the backdoor criterion from source 0
    (W, X, Y) and by the frontdoor criterion from source 1 (X, M, Y). theta = (beta,).
    """
    covariates = tuple(covariates)
    slots = (
        NuisanceSlot('propensity', 'propensity', 'X', covariates),
        NuisanceSlot('outcome_regression', 'regression', 'X', covariates, outcome='Y'),
        NuisanceSlot('frontdoor', 'frontdoor', 'X', outcome='Y', mediator='M'),
    )

    def frontdoor_pieces(batch, eta):
        score = frontdoor_score(batch['X'], batch['M'], batch['Y'], eta.slot('frontdoor'))
        return score, 1.0

    backdoor = Moment(
        'backdoor', (*covariates, 'X', 'Y'),
        _aipw_pieces(covariates, 'X', 'Y', 'propensity', 'outcome_regression'),
        Coordinate(0), slots=('propensity', 'outcome_regression'))
    frontdoor = Moment(
        'frontdoor', ('X', 'M', 'Y'), frontdoor_pieces, Coordinate(0), slots=('frontdoor',))
    return MomentModel(
        name='confounder_mediator',
        param_names=('beta',),
        moments=(backdoor, frontdoor),
        source_variables=((*covariates, 'X', 'Y'), ('X', 'M', 'Y')),
        mask_table=[[1, 0], [0, 1]],
        theta_box=_box(1, theta_bound),
        slots=slots,
        options={'covariates': covariates},
    )


def two_confounders_cost(covariates=('W',), confounders=('U',), theta_bound=None):
    """
    Average treatment effect from an unconfounded source 0 (U, W, X, Y) combined
    with a cheaper confounded source 1 (W, X, Y). theta = (beta, alpha) with alpha
    the W-adjusted contrast both sources estimate.
    """
    covariates = tuple(covariates)
    confounders = tuple(confounders)
    adjustment = covariates + confounders
    slots = (
        NuisanceSlot('full_propensity', 'propensity', 'X', adjustment),
        NuisanceSlot('full_regression', 'regression', 'X', adjustment, outcome='Y'),
        NuisanceSlot('propensity', 'propensity', 'X', covariates),
        NuisanceSlot('outcome_regression', 'regression', 'X', covariates, outcome='Y'),
    )
    confounded = _aipw_pieces(covariates, 'X', 'Y', 'propensity', 'outcome_regression')
    moments = (
        Moment('adjusted', (*adjustment, 'X', 'Y'),
               _aipw_pieces(adjustment, 'X', 'Y', 'full_propensity', 'full_regression'),
               Coordinate(0), slots=('full_propensity', 'full_regression')),
        Moment('confounded_rich', (*covariates, 'X', 'Y'), confounded,
               Coordinate(1), slots=('propensity', 'outcome_regression')),
        Moment('confounded_cheap', (*covariates, 'X', 'Y'), confounded,
               Coordinate(1), slots=('propensity', 'outcome_regression')),
    )
    return MomentModel(
        name='two_confounders_cost',
        param_names=('beta', 'alpha'),
        moments=moments,
        source_variables=((*confounders, *covariates, 'X', 'Y'), (*covariates, 'X', 'Y')),
        mask_table=[[1, 1, 0], [0, 0, 1]],
        theta_box=_box(2, theta_bound),
        slots=slots,
        options={'covariates': covariates, 'confounders': confounders},
    )


def neyman_allocation(theta_bound=None):
    """
    Randomized trial: source 0 returns treated outcomes Y(1), source 1 control
    outcomes Y(0). theta = (beta, alpha) with beta the average treatment effect.
    """
    return MomentModel(
        name='neyman_allocation',
        param_names=('beta', 'alpha'),
        moments=(
            Moment('treated', ('Y',), lambda batch, eta: (batch['Y'], 1.0), Sum(0, 1)),
            Moment('control', ('Y',), lambda batch, eta: (batch['Y'], 1.0), Coordinate(1)),
        ),
        source_variables=(('Y',), ('Y',)),
        mask_table=[[1, 0], [0, 1]],
        theta_box=_box(2, theta_bound),
    )


MODELS = {
    'two_sample_iv': two_sample_iv,
    'two_sample_late': two_sample_late,
    'confounder_mediator': confounder_mediator,
    'two_confounders_cost': two_confounders_cost,
    'neyman_allocation': neyman_allocation,
}


def get_model(name, **options):
    """
    Build the built-in model registered under ``name``.

    Raises:
        ConfigurationError: For an unknown name.
    """
    try:
        factory = MODELS[name]
    except KeyError:
        raise ConfigurationError(f"Unknown moment model '{name}'. Choose one of {sorted(MODELS)}.")
    return factory(**options)
