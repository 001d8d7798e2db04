"""
Queryable data sources.

A ``Scenario`` wires a moment model to one sampler per data source, a cost
vector and, for synthetic families, the ground truth (true parameters, true
nuisances, population moments and the oracle allocation when it is known in
closed form). Samplers map ``(rng, n)`` to a column batch.

Families:

neyman_allocation: Treated and control arms of a randomized trial.
two_sample_iv: Linear instrumental variables, first stage and reduced form split.
two_sample_late: Linear LATE with the two contrasts split across sources.
confounder_mediator: Backdoor source (W, X, Y) and frontdoor source (X, M, Y).
two_confounders_cost: Unconfounded expensive source and confounded cheap source.
rff_late: Nonlinear LATE built from random Fourier feature functions.
replay: Bootstrap replay of user CSV tables.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from types import SimpleNamespace
from typing import Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.kernel_approximation import RBFSampler

from oms.exceptions import ConfigurationError, SchemaError
from oms.moments import FrontdoorTables, frontdoor_score, get_model

logger = logging.getLogger(__name__)


def stream(seed, run, stream_id):
    """
    Counter-based random stream for (run, stream_id) under a base seed.
    """
    sequence = np.random.SeedSequence(seed, spawn_key=(run, stream_id))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True)
class Truth:
    """
    Ground truth of a scenario.

    Attributes:
        theta (ndarray | None): True parameter vector.
        beta (float | None): True target f_tar(theta).
        nuisances (dict | None): Slot name -> true nuisance predictor.
        kappa_star (ndarray | None): Oracle allocation, when known in closed form.
        population (list | None): Per-source population (G_d, Omega_d) at the truth.
        cost_weighted (bool): Whether ``kappa_star`` minimizes the cost-weighted variance.
    """
    theta: Optional[np.ndarray] = None
    beta: Optional[float] = None
    nuisances: Optional[Mapping] = None
    kappa_star: Optional[np.ndarray] = None
    population: Optional[list] = None
    cost_weighted: bool = False


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    model: object
    samplers: Tuple
    cost: np.ndarray
    truth: Optional[Truth] = None
    params: Mapping = field(default_factory=dict)

    @property
    def num_sources(self):
        return len(self.samplers)

    @property
    def uniform_cost(self):
        return bool(np.all(self.cost == self.cost[0]))


class SampleStream:
    """
    Buffered iterator of single samples from one sampler and one random stream.
    """

    def __init__(self, sampler, rng, block=256):
        self.sampler = sampler
        self.rng = rng
        self.block = block
        self._batch = {}
        self._size = 0
        self._cursor = 0

    def next(self):
        if self._cursor >= self._size:
            self._batch = self.sampler(self.rng, self.block)
            self._size = self.block
            self._cursor = 0
        row = {name: float(values[self._cursor]) for name, values in self._batch.items()}
        self._cursor += 1
        return row


def query(scenario, source, rng):
    """
    Draw one i.i.d. sample from the indexed source.
    """
    if not 0 <= source < scenario.num_sources:
        raise ConfigurationError(f"Source index {source} outside [0, {scenario.num_sources - 1}].")
    batch = scenario.samplers[source](rng, 1)
    return {name: float(values[0]) for name, values in batch.items()}


class Family:
    """
    Base class of synthetic scenario families.

    Subclasses declare ``name``, ``defaults`` and implement ``model``, ``draw``
    and ``truth``.
    """
    name = ''
    defaults = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigurationError(f"Unknown parameters for family '{self.name}': {sorted(unknown)}.")
        self.params = {**self.defaults, **{key: float(value) for key, value in params.items()}}
        self.p = SimpleNamespace(**self.params)

    def model(self, theta_bound=None):
        raise NotImplementedError

    def draw(self, source, rng, n):
        raise NotImplementedError

    def truth(self):
        raise NotImplementedError

    def sampler(self, source):
        def sample(rng, n):
            return self.draw(source, rng, n)
        return sample

    def scenario(self, cost=None, theta_bound=None):
        model = self.model(theta_bound=theta_bound)
        return Scenario(
            name=self.name,
            model=model,
            samplers=tuple(self.sampler(d) for d in range(model.num_sources)),
            cost=_cost_vector(cost, model.num_sources),
            truth=self.truth(),
            params=dict(self.params),
        )


def _cost_vector(cost, num_sources):
    if cost is None:
        return np.ones(num_sources)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (num_sources,):
        raise ConfigurationError(f"Cost vector must have {num_sources} entries.")
    if not np.all(cost > 0):
        raise ConfigurationError('Cost entries must be strictly positive.')
    return cost


def _correlated_noise(rng, n, sigma_x, sigma_y, rho):
    first, second = rng.standard_normal((2, n))
    return sigma_x * first, sigma_y * (rho * first + np.sqrt(1 - rho ** 2) * second)


class NeymanAllocation(Family):
    name = 'neyman_allocation'
    defaults = {'mu1': 1.0, 'mu0': 0.0, 'sigma1': 2.0, 'sigma0': 1.0}

    def model(self, theta_bound=None):
        return get_model('neyman_allocation', theta_bound=theta_bound)

    def draw(self, source, rng, n):
        if source == 0:
            return {'Y': self.p.mu1 + self.p.sigma1 * rng.standard_normal(n)}
        return {'Y': self.p.mu0 + self.p.sigma0 * rng.standard_normal(n)}

    def truth(self):
        p = self.p
        treated = (np.array([[-1.0, -1.0], [0.0, 0.0]]), np.diag([p.sigma1 ** 2, 0.0]))
        control = (np.array([[0.0, 0.0], [0.0, -1.0]]), np.diag([0.0, p.sigma0 ** 2]))
        return Truth(
            theta=np.array([p.mu1 - p.mu0, p.mu0]),
            beta=p.mu1 - p.mu0,
            nuisances={},
            kappa_star=np.array([p.sigma1, p.sigma0]) / (p.sigma1 + p.sigma0),
            population=[treated, control],
        )


class TwoSampleIV(Family):
    name = 'two_sample_iv'
    defaults = {'beta': 1.0, 'alpha': 1.0, 'sigma_z': 1.0, 'sigma_x': 1.0, 'sigma_y': 1.0, 'rho': -0.5}

    def model(self, theta_bound=None):
        return get_model('two_sample_iv', theta_bound=theta_bound)

    def draw(self, source, rng, n):
        p = self.p
        z = p.sigma_z * rng.standard_normal(n)
        noise_x, noise_y = _correlated_noise(rng, n, p.sigma_x, p.sigma_y, p.rho)
        x = p.alpha * z + noise_x
        if source == 0:
            return {'Z': z, 'X': x}
        return {'Z': z, 'Y': p.beta * x + noise_y}

    @property
    def reduced_form_variance(self):
        p = self.p
        return p.beta ** 2 * p.sigma_x ** 2 + p.sigma_y ** 2 + 2 * p.beta * p.rho * p.sigma_x * p.sigma_y

    def truth(self):
        p = self.p
        s = p.sigma_z ** 2
        first = abs(p.beta) * p.sigma_x
        second = np.sqrt(self.reduced_form_variance)
        kappa = np.array([first, second]) / (first + second) if first + second > 0 else np.full(2, 0.5)
        return Truth(
            theta=np.array([p.beta, p.alpha]),
            beta=p.beta,
            nuisances={},
            kappa_star=kappa,
            population=[
                (np.array([[0.0, -s], [0.0, 0.0]]), np.diag([s * p.sigma_x ** 2, 0.0])),
                (np.array([[0.0, 0.0], [-p.alpha * s, -p.beta * s]]),
                 np.diag([0.0, s * self.reduced_form_variance])),
            ],
        )


class TwoSampleLATE(Family):
    name = 'two_sample_late'
    defaults = {
        'beta': 1.0, 'alpha': 1.0, 'gamma0': 0.0, 'gamma1': 0.5,
        'a_x': 0.0, 'b_x': 0.5, 'a_y': 0.0, 'b_y': 0.5,
        'sigma_x': 1.0, 'sigma_y': 1.3, 'rho': 0.3,
    }

    def model(self, theta_bound=None):
        return get_model('two_sample_late', theta_bound=theta_bound)

    def draw(self, source, rng, n):
        p = self.p
        w = rng.standard_normal(n)
        z = (rng.random(n) < expit(p.gamma0 + p.gamma1 * w)).astype(float)
        noise_x, noise_y = _correlated_noise(rng, n, p.sigma_x, p.sigma_y, p.rho)
        x = p.a_x + p.alpha * z + p.b_x * w + noise_x
        if source == 0:
            return {'W': w, 'Z': z, 'Y': p.a_y + p.beta * x + p.b_y * w + noise_y}
        return {'W': w, 'Z': z, 'X': x}

    def propensity(self, covariates):
        return expit(self.p.gamma0 + self.p.gamma1 * covariates[:, 0])

    def treatment_mean(self, treatment, covariates):
        p = self.p
        return p.a_x + p.alpha * treatment + p.b_x * covariates[:, 0]

    def outcome_mean(self, treatment, covariates):
        p = self.p
        return p.a_y + p.beta * self.treatment_mean(treatment, covariates) + p.b_y * covariates[:, 0]

    def truth(self):
        p = self.p
        spread = p.gamma1 ** 2 / 2
        # E[1 / (pi (1 - pi))] for a logistic propensity with Gaussian covariate
        inverse_overlap = 2 + np.exp(p.gamma0 + spread) + np.exp(-p.gamma0 + spread)
        outcome_residual = p.beta ** 2 * p.sigma_x ** 2 + p.sigma_y ** 2 + 2 * p.beta * p.rho * p.sigma_x * p.sigma_y
        first = np.sqrt(outcome_residual)
        second = abs(p.beta) * p.sigma_x
        return Truth(
            theta=np.array([p.beta, p.alpha]),
            beta=p.beta,
            nuisances={
                'propensity': self.propensity,
                'outcome_regression': self.outcome_mean,
                'treatment_regression': self.treatment_mean,
            },
            kappa_star=np.array([first, second]) / (first + second),
            population=[
                (np.array([[-p.alpha, -p.beta], [0.0, 0.0]]),
                 np.diag([outcome_residual * inverse_overlap, 0.0])),
                (np.array([[0.0, 0.0], [0.0, -1.0]]),
                 np.diag([0.0, p.sigma_x ** 2 * inverse_overlap])),
            ],
        )


class ConfounderMediator(Family):
    name = 'confounder_mediator'
    defaults = {
        'p_w': 0.5, 'a': -3.0, 'b': 5.0, 'q0': 0.2, 'q1': 0.8,
        'gamma': 1.0, 'delta': 2.0, 'c_y': 0.0, 'sigma_y': 1.0,
    }

    def model(self, theta_bound=None):
        return get_model('confounder_mediator', theta_bound=theta_bound)

    def draw(self, source, rng, n):
        p = self.p
        w = (rng.random(n) < p.p_w).astype(float)
        x = (rng.random(n) < expit(p.a + p.b * w)).astype(float)
        m = (rng.random(n) < np.where(x == 1, p.q1, p.q0)).astype(float)
        y = p.c_y + p.gamma * m + p.delta * w + p.sigma_y * rng.standard_normal(n)
        if source == 0:
            return {'W': w, 'X': x, 'Y': y}
        return {'X': x, 'M': m, 'Y': y}

    def propensity(self, covariates):
        return expit(self.p.a + self.p.b * covariates[:, 0])

    def outcome_mean(self, treatment, covariates):
        p = self.p
        return p.c_y + p.gamma * (p.q0 + (p.q1 - p.q0) * treatment) + p.delta * covariates[:, 0]

    @cached_property
    def frontdoor_truth(self):
        """Return the true frontdoor tables and P(W = 1 | X = x)."""
        p = self.p
        treated = np.array([expit(p.a), expit(p.a + p.b)])
        p_x1 = (1 - p.p_w) * treated[0] + p.p_w * treated[1]
        w_given_x = np.array([p.p_w * (1 - treated[1]) / (1 - p_x1), p.p_w * treated[1] / p_x1])
        mediator = np.array([[1 - p.q0, p.q0], [1 - p.q1, p.q1]])
        outcome = p.c_y + p.gamma * np.array([[0.0, 1.0], [0.0, 1.0]]) + p.delta * w_given_x[:, None]
        return FrontdoorTables(mediator=mediator, outcome=outcome, treatment=np.array([1 - p_x1, p_x1])), w_given_x

    def truth(self):
        p = self.p
        beta = p.gamma * (p.q1 - p.q0)
        tables, w_given_x = self.frontdoor_truth
        noise = p.gamma ** 2 * np.array([p.q0 * (1 - p.q0), p.q1 * (1 - p.q1)]) + p.sigma_y ** 2

        backdoor = 0.0
        for w, weight in ((0.0, 1 - p.p_w), (1.0, p.p_w)):
            pi = expit(p.a + p.b * w)
            backdoor += weight * (noise[1] / pi + noise[0] / (1 - pi))

        frontdoor = 0.0
        for x in (0, 1):
            residual = p.delta ** 2 * w_given_x[x] * (1 - w_given_x[x]) + p.sigma_y ** 2
            for m in (0, 1):
                mass = tables.treatment[x] * tables.mediator[x, m]
                centre = frontdoor_score([x], [m], [tables.outcome[x, m]], tables)[0] - beta
                slope = (tables.mediator[1, m] - tables.mediator[0, m]) / tables.mediator[x, m]
                frontdoor += mass * (slope ** 2 * residual + centre ** 2)

        return Truth(
            theta=np.array([beta]),
            beta=beta,
            nuisances={
                'propensity': self.propensity,
                'outcome_regression': self.outcome_mean,
                'frontdoor': tables,
            },
            population=[
                (np.array([[-1.0], [0.0]]), np.diag([backdoor, 0.0])),
                (np.array([[0.0], [-1.0]]), np.diag([0.0, frontdoor])),
            ],
        )


_HERMITE_NODES, _HERMITE_WEIGHTS = np.polynomial.hermite_e.hermegauss(64)
_HERMITE_WEIGHTS = _HERMITE_WEIGHTS / _HERMITE_WEIGHTS.sum()


class TwoConfoundersCost(Family):
    name = 'two_confounders_cost'
    defaults = {
        'rho': 0.5, 'a': 0.0, 'b_w': 0.5, 'b_u': 1.0,
        'tau': 1.0, 'c_w': 1.0, 'c_u': 1.0, 'sigma_y': 1.0,
    }

    def model(self, theta_bound=None):
        return get_model('two_confounders_cost', theta_bound=theta_bound)

    def draw(self, source, rng, n):
        p = self.p
        w, noise = rng.standard_normal((2, n))
        u = p.rho * w + np.sqrt(1 - p.rho ** 2) * noise
        x = (rng.random(n) < expit(p.a + p.b_w * w + p.b_u * u)).astype(float)
        y = p.tau * x + p.c_w * w + p.c_u * u + p.sigma_y * rng.standard_normal(n)
        if source == 0:
            return {'U': u, 'W': w, 'X': x, 'Y': y}
        return {'W': w, 'X': x, 'Y': y}

    def full_propensity(self, covariates):
        p = self.p
        return expit(p.a + p.b_w * covariates[:, 0] + p.b_u * covariates[:, 1])

    def full_outcome_mean(self, treatment, covariates):
        p = self.p
        return p.tau * treatment + p.c_w * covariates[:, 0] + p.c_u * covariates[:, 1]

    def _confounder_moments(self, w):
        """Return P(X=1 | w), E[U | X=1, w] and E[U | X=0, w] by Gauss-Hermite quadrature."""
        p = self.p
        u = p.rho * w[:, None] + np.sqrt(1 - p.rho ** 2) * _HERMITE_NODES[None, :]
        treated = expit(p.a + p.b_w * w[:, None] + p.b_u * u)
        pi = treated @ _HERMITE_WEIGHTS
        shift_treated = (u * treated) @ _HERMITE_WEIGHTS / pi
        shift_control = (u * (1 - treated)) @ _HERMITE_WEIGHTS / (1 - pi)
        return pi, shift_treated, shift_control

    def propensity(self, covariates):
        return self._confounder_moments(covariates[:, 0])[0]

    def outcome_mean(self, treatment, covariates):
        p = self.p
        w = covariates[:, 0]
        _, shift_treated, shift_control = self._confounder_moments(w)
        shift = np.where(treatment == 1, shift_treated, shift_control)
        return p.tau * treatment + p.c_w * w + p.c_u * shift

    def truth(self):
        p = self.p
        _, shift_treated, shift_control = self._confounder_moments(_HERMITE_NODES)
        alpha = p.tau + p.c_u * float((shift_treated - shift_control) @ _HERMITE_WEIGHTS)
        return Truth(
            theta=np.array([p.tau, alpha]),
            beta=p.tau,
            nuisances={
                'full_propensity': self.full_propensity,
                'full_regression': self.full_outcome_mean,
                'propensity': self.propensity,
                'outcome_regression': self.outcome_mean,
            },
        )


class RffFunction:
    """
    Random function x -> sum_k w_k sqrt(2 / K) cos(omega_k . x + b_k) approximating
    a draw from a Gaussian process with squared exponential kernel.
    """

    def __init__(self, input_dim, num_features=100, bandwidth=1.0, seed=0):
        self.num_features = num_features
        self.sampler = RBFSampler(
            gamma=1.0 / (2 * bandwidth ** 2), n_components=num_features, random_state=seed,
        ).fit(np.zeros((1, input_dim)))
        self.weights = np.random.default_rng(seed).standard_normal(num_features)

    @property
    def frequencies(self):
        return self.sampler.random_weights_

    @property
    def phases(self):
        return self.sampler.random_offset_

    def __call__(self, *inputs):
        x = np.column_stack([np.asarray(value, dtype=float).ravel() for value in inputs])
        return self.sampler.transform(x) @ self.weights


_LEGENDRE_NODES, _LEGENDRE_WEIGHTS = np.polynomial.legendre.leggauss(96)
_LEGENDRE_WEIGHTS = _LEGENDRE_WEIGHTS / 2


class RffLATE(Family):
    """
    Nonlinear two-sample LATE with an unmeasured confounder U:

        W ~ U[-theta_w, theta_w], U ~ U[-theta_u, theta_u]
        Z ~ Bernoulli(sigmoid(f_Z(W)))
        X ~ Bernoulli(sigmoid(f_U(U) + f_WZ(W, Z) + b_z))
        Y = f_YU(U) + f_WX(W, X) + b_y + U[-theta_y, theta_y]

    Truth, true nuisances and population moments are computed by Gauss-Legendre
    quadrature over the uniform variables.
    """
    name = 'rff_late'
    defaults = {
        'theta_w': 1.0, 'theta_u': 1.0, 'theta_y': 0.5, 'b_z': 0.0, 'b_y': 0.0,
        'bandwidth': 1.0, 'num_features': 100.0, 'seed': 0.0,
    }

    @cached_property
    def functions(self):
        p = self.p
        seeds = np.random.SeedSequence(int(p.seed)).generate_state(5)
        dims = {'f_z': 1, 'f_u': 1, 'f_wz': 2, 'f_yu': 1, 'f_wx': 2}
        return SimpleNamespace(**{
            name: RffFunction(dim, int(p.num_features), p.bandwidth, int(seed))
            for (name, dim), seed in zip(dims.items(), seeds)
        })

    def model(self, theta_bound=None):
        return get_model('two_sample_late', theta_bound=theta_bound)

    def draw(self, source, rng, n):
        p = self.p
        f = self.functions
        w = rng.uniform(-p.theta_w, p.theta_w, n)
        u = rng.uniform(-p.theta_u, p.theta_u, n)
        z = (rng.random(n) < expit(f.f_z(w))).astype(float)
        x = (rng.random(n) < expit(f.f_u(u) + f.f_wz(w, z) + p.b_z)).astype(float)
        y = f.f_yu(u) + f.f_wx(w, x) + p.b_y + rng.uniform(-p.theta_y, p.theta_y, n)
        if source == 0:
            return {'W': w, 'Z': z, 'Y': y}
        return {'W': w, 'Z': z, 'X': x}

    def propensity(self, covariates):
        return expit(self.functions.f_z(covariates[:, 0]))

    def _conditional(self, treatment, w):
        """Return E[X | z, w], E[Y | z, w] and E[Y^2 | z, w], integrating U out."""
        p = self.p
        f = self.functions
        u = p.theta_u * _LEGENDRE_NODES
        confounding = f.f_u(u)
        direct = f.f_yu(u)
        treated = expit(confounding[None, :] + f.f_wz(w, treatment)[:, None] + p.b_z)
        outcome_1 = direct[None, :] + f.f_wx(w, np.ones_like(w))[:, None] + p.b_y
        outcome_0 = direct[None, :] + f.f_wx(w, np.zeros_like(w))[:, None] + p.b_y
        mean_x = treated @ _LEGENDRE_WEIGHTS
        mean_y = (treated * outcome_1 + (1 - treated) * outcome_0) @ _LEGENDRE_WEIGHTS
        square_y = (treated * outcome_1 ** 2 + (1 - treated) * outcome_0 ** 2) @ _LEGENDRE_WEIGHTS + p.theta_y ** 2 / 3
        return mean_x, mean_y, square_y

    def treatment_mean(self, treatment, covariates):
        return self._conditional(np.asarray(treatment, dtype=float), covariates[:, 0])[0]

    def outcome_mean(self, treatment, covariates):
        return self._conditional(np.asarray(treatment, dtype=float), covariates[:, 0])[1]

    @cached_property
    def _population(self):
        p = self.p
        w = p.theta_w * _LEGENDRE_NODES
        pi = expit(self.functions.f_z(w))
        x1, y1, yy1 = self._conditional(np.ones_like(w), w)
        x0, y0, yy0 = self._conditional(np.zeros_like(w), w)
        alpha = float((x1 - x0) @ _LEGENDRE_WEIGHTS)
        reduced = float((y1 - y0) @ _LEGENDRE_WEIGHTS)
        if abs(alpha) < 1e-8:
            raise ConfigurationError('The instrument has no effect on the treatment for this seed.')
        var_x = x1 * (1 - x1) / pi + x0 * (1 - x0) / (1 - pi) + (x1 - x0 - alpha) ** 2
        var_y = (yy1 - y1 ** 2) / pi + (yy0 - y0 ** 2) / (1 - pi) + (y1 - y0 - reduced) ** 2
        return alpha, reduced / alpha, float(var_y @ _LEGENDRE_WEIGHTS), float(var_x @ _LEGENDRE_WEIGHTS)

    def truth(self):
        alpha, beta, outcome_variance, treatment_variance = self._population
        return Truth(
            theta=np.array([beta, alpha]),
            beta=beta,
            nuisances={
                'propensity': self.propensity,
                'outcome_regression': self.outcome_mean,
                'treatment_regression': self.treatment_mean,
            },
            population=[
                (np.array([[-alpha, -beta], [0.0, 0.0]]), np.diag([outcome_variance, 0.0])),
                (np.array([[0.0, 0.0], [0.0, -1.0]]), np.diag([0.0, treatment_variance])),
            ],
        )


FAMILIES = {
    family.name: family
    for family in (NeymanAllocation, TwoSampleIV, TwoSampleLATE, ConfounderMediator, TwoConfoundersCost, RffLATE)
}
ALIASES = {'neyman': 'neyman_allocation', 'iv': 'two_sample_iv', 'late': 'two_sample_late'}


def get_family(name):
    name = ALIASES.get(name, name)
    try:
        return FAMILIES[name]
    except KeyError:
        raise ConfigurationError(f"Unknown scenario family '{name}'. Choose one of {sorted(FAMILIES) + ['replay']}.")


class EmpiricalSource:
    """
    With-replacement bootstrap sampler over the rows of a table.
    """

    def __init__(self, table, rng_seed=None):
        self.table = {name: np.asarray(values, dtype=float) for name, values in table.items()}
        self.num_rows = len(next(iter(self.table.values())))
        self.rng = np.random.default_rng(rng_seed)

    def __call__(self, rng=None, n=1):
        rng = self.rng if rng is None else rng
        rows = rng.integers(0, self.num_rows, size=n)
        return {name: values[rows] for name, values in self.table.items()}


def read_table(csv_path, schema):
    """
    Read the columns named in ``schema`` from a CSV file as floats.

    Raises:
        SchemaError: For a missing column or a non-numeric cell.
        ConfigurationError: For an unreadable or empty file.
    """
    try:
        frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigurationError(f"Cannot read '{csv_path}': {exc}")
    for name in schema:
        if name not in frame.columns:
            raise SchemaError(f"Column '{name}' is missing from '{csv_path}'.", variable=name)
    if frame.empty:
        raise ConfigurationError(f"'{csv_path}' has no data rows.")
    table = {}
    for name in schema:
        values = pd.to_numeric(frame[name].str.strip(), errors='coerce')
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            row = int(bad[0]) + 1
            raise SchemaError(
                f"Non-numeric value '{frame[name].iloc[bad[0]]}' in column '{name}', row {row} of '{csv_path}'.",
                variable=name, row=row)
        table[name] = values.to_numpy(dtype=float)
    return table


def load_empirical(csv_path, schema, rng_seed=None):
    return EmpiricalSource(read_table(csv_path, schema), rng_seed=rng_seed)


def _replay_scenario(config):
    model = get_model(config.get('model', 'two_sample_late'), **config.get('model_options', {}))
    specs = config.get('sources') or []
    if len(specs) != model.num_sources:
        raise ConfigurationError(f"Model '{model.name}' needs {model.num_sources} replay sources, got {len(specs)}.")
    samplers = []
    for d, spec in enumerate(specs):
        schema = tuple(spec.get('columns') or model.source_variables[d])
        missing = set(model.source_variables[d]) - set(schema)
        if missing:
            raise SchemaError(f"Replay source {d} does not declare {sorted(missing)}.", variable=sorted(missing)[0])
        samplers.append(load_empirical(spec['path'], schema))
    truth = None
    if config.get('truth'):
        known = config['truth']
        truth = Truth(
            theta=np.asarray(known['theta'], dtype=float) if known.get('theta') is not None else None,
            beta=known.get('beta'),
            kappa_star=np.asarray(known['kappa_star'], dtype=float) if known.get('kappa_star') is not None else None,
            cost_weighted=bool(known.get('cost_weighted', False)),
        )
    return Scenario(
        name=config.get('name', 'replay'),
        model=model,
        samplers=tuple(samplers),
        cost=_cost_vector(config.get('cost'), model.num_sources),
        truth=truth,
        params={},
    )


def build_scenario(config):
    """
    Build a scenario from its configuration document.

    Args:
        config (dict): ``family`` plus ``params``, ``cost`` and ``theta_bound``;
            replay scenarios give ``model``, ``model_options``, ``sources`` and ``truth``.

    Returns:
        Scenario
    """
    family_name = config.get('family')
    if family_name == 'replay':
        return _replay_scenario(config)
    family = get_family(family_name)(**(config.get('params') or {}))
    scenario = family.scenario(cost=config.get('cost'), theta_bound=config.get('theta_bound'))
    logger.debug('Built scenario %s with params %s.', scenario.name, scenario.params)
    return scenario
