"""
On-policy and off-policy asymptotic variance of the target estimate.

The asymptotic variance at an allocation kappa is the sandwich

    V(kappa) = grad_f^T [G(kappa)^T Omega(kappa)^{-1} G(kappa)]^{-1} grad_f

where G and Omega are the moment Jacobian and covariance under kappa. A
``VarianceSurface`` holds the estimates at the realized allocation kappa_T and
reweights them to any other kappa with the mask expectation matrices.

Only moments selected with positive probability under kappa enter the
sandwich; moments that are selected but were never observed make it singular.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from oms.conf import oms_settings
from oms.exceptions import ConfigurationError
from oms.gmm import covariance, jacobian_average
from oms.nuisance import oracle_nuisance
from oms.sources import stream

logger = logging.getLogger(__name__)


def as_simplex_point(weights, atol=1e-9):
    """
    Validate ``weights`` as a probability vector and return it as a float array.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1 or np.any(weights < -atol) or abs(weights.sum() - 1) > atol:
        raise ConfigurationError(f"{weights.tolist()} is not a point of the probability simplex.")
    weights = np.clip(weights, 0, None)
    return weights / weights.sum()


def mask_expectations(model, kappa):
    """
    Return m_G (M x D) and m_Omega (M x M) at ``kappa``.
    """
    kappa = np.asarray(kappa, dtype=float)
    masks = model.mask_table.astype(float)
    selected = kappa @ masks
    m_g = np.repeat(selected[:, None], model.num_params, axis=1)
    m_omega = masks.T @ (kappa[:, None] * masks)
    return m_g, m_omega


@dataclass(frozen=True, eq=False)
class VarianceSurface:
    """
    Moment Jacobian and covariance estimated at kappa_T, reweightable to any kappa.
    """
    G_hat: np.ndarray
    Omega_hat: np.ndarray
    kappa_T: np.ndarray
    model: object
    grad_f: np.ndarray
    theta_ref: np.ndarray

    @property
    def mask_table(self):
        return self.model.mask_table


def _reciprocal(values):
    return np.divide(1.0, values, out=np.zeros_like(values), where=values > 0)


def sandwich(G, omega, grad_f, active, singular_condition=None):
    """
    grad_f^T [G_a^T Omega_a^{-1} G_a]^{-1} grad_f over the active moments, or
    +inf when either matrix is numerically singular.
    """
    singular_condition = float(oms_settings.resolve(singular_condition, 'SINGULAR_CONDITION'))
    if not np.any(active):
        return np.inf
    G = G[active]
    omega = omega[np.ix_(active, active)]
    omega = (omega + omega.T) / 2
    if not np.all(np.isfinite(omega)) or np.linalg.cond(omega) > singular_condition:
        return np.inf
    information = G.T @ np.linalg.solve(omega, G)
    if np.linalg.cond(information) > singular_condition:
        return np.inf
    value = float(grad_f @ np.linalg.solve(information, grad_f))
    if not np.isfinite(value) or value < 0:
        return np.inf
    return value


def build_surface(log, theta):
    """
    Estimate G_T and Omega_T at ``theta`` from the log.
    """
    model = log.model
    theta = np.asarray(theta, dtype=float)
    return VarianceSurface(
        G_hat=jacobian_average(log, theta),
        Omega_hat=covariance(log, theta),
        kappa_T=log.kappa,
        model=model,
        grad_f=model.f_tar_grad(theta),
        theta_ref=theta,
    )


def variance_at(surface, kappa):
    """
    Reweighted variance estimate at ``kappa``; +inf for infeasible allocations.
    """
    kappa = np.asarray(kappa, dtype=float)
    model = surface.model
    m_g, m_omega = mask_expectations(model, kappa)
    base_g, base_omega = mask_expectations(model, surface.kappa_T)
    G = m_g * _reciprocal(base_g) * surface.G_hat
    omega = m_omega * _reciprocal(base_omega) * surface.Omega_hat
    return sandwich(G, omega, surface.grad_f, np.diag(m_omega) > 0)


def on_policy_variance(log, theta):
    """
    Plug-in variance estimate at the realized allocation.
    """
    theta = np.asarray(theta, dtype=float)
    model = log.model
    _, m_omega = mask_expectations(model, log.kappa)
    return sandwich(
        jacobian_average(log, theta), covariance(log, theta), model.f_tar_grad(theta), np.diag(m_omega) > 0)


def population_moments(scenario, mc_samples=None, seed=0, chunk=100_000):
    """
    Per-source population Jacobian and covariance of the masked moments at the truth.

    Uses the family's analytic moments when available, else ``mc_samples`` draws
    per source with the true nuisances.
    """
    truth = scenario.truth
    if truth is None or truth.theta is None:
        raise ConfigurationError(f"Scenario '{scenario.name}' has no true parameters.")
    if truth.population is not None:
        return truth.population
    model = scenario.model
    mc_samples = int(oms_settings.resolve(mc_samples, 'MC_SAMPLES'))
    snapshot = oracle_nuisance(scenario)
    moments = []
    for d, sampler in enumerate(scenario.samplers):
        rng = stream(seed, 0, d)
        active = model.mask(d).astype(bool)
        jacobian = np.zeros((model.num_moments, model.num_params))
        outer = np.zeros((model.num_moments, model.num_moments))
        remaining = mc_samples
        while remaining > 0:
            size = min(chunk, remaining)
            pieces = model.prepare(sampler(rng, size), snapshot, active=active)
            values = model.evaluate(pieces, truth.theta)
            jacobian += model.evaluate_jacobian(pieces, truth.theta).sum(axis=0)
            outer += values.T @ values
            remaining -= size
        moments.append((jacobian / mc_samples, outer / mc_samples))
    logger.debug('Estimated population moments of %s from %d draws per source.', scenario.name, mc_samples)
    return moments


@lru_cache(maxsize=32)
def oracle_surface(scenario, mc_samples=None):
    """
    Variance surface built from population moments at the truth.
    """
    moments = population_moments(scenario, mc_samples)
    kappa_ref = np.full(scenario.num_sources, 1.0 / scenario.num_sources)
    G = sum(weight * jacobian for weight, (jacobian, _) in zip(kappa_ref, moments))
    omega = sum(weight * outer for weight, (_, outer) in zip(kappa_ref, moments))
    theta = np.asarray(scenario.truth.theta, dtype=float)
    return VarianceSurface(
        G_hat=G,
        Omega_hat=(omega + omega.T) / 2,
        kappa_T=kappa_ref,
        model=scenario.model,
        grad_f=scenario.model.f_tar_grad(theta),
        theta_ref=theta,
    )


def oracle_variance(scenario, kappa, mc_samples=None):
    return variance_at(oracle_surface(scenario, mc_samples), kappa)
