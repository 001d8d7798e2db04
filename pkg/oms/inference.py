"""
Asymptotic confidence intervals and confidence sequences for the target.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from oms.conf import oms_settings
from oms.exceptions import ConfigurationError


@dataclass(frozen=True)
class Interval:
    center: float
    halfwidth: float
    level: float

    @property
    def lower(self):
        return self.center - self.halfwidth

    @property
    def upper(self):
        return self.center + self.halfwidth

    def covers(self, value):
        return bool(self.lower <= value <= self.upper)


@dataclass(frozen=True)
class ConfSeqParams:
    rho: float
    alpha: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigurationError('rho must be positive.')
        if not 0 < self.alpha < 1:
            raise ConfigurationError('alpha must lie in (0, 1).')


def normal_quantile(probability):
    return float(special.ndtri(probability))


def confidence_interval(beta_hat, v_hat, t, alpha=None):
    """
    Wald interval beta_hat +- z_{1 - alpha/2} sqrt(v_hat / t).
    """
    alpha = float(oms_settings.resolve(alpha, 'ALPHA'))
    halfwidth = normal_quantile(1 - alpha / 2) * np.sqrt(v_hat / t) if v_hat > 0 else 0.0
    return Interval(center=float(beta_hat), halfwidth=float(max(halfwidth, 0.0)), level=1 - alpha)


def confseq_radius(t, v_hat_t, rho, alpha=None):
    """
    Radius of the asymptotic confidence sequence at time t:

        sqrt((t V rho^2 + 1) / (t^2 rho^2) * log((t V rho^2 + 1) / alpha^2))
    """
    alpha = float(oms_settings.resolve(alpha, 'ALPHA'))
    scaled = t * v_hat_t * rho ** 2 + 1
    return float(np.sqrt(scaled / (t ** 2 * rho ** 2) * np.log(scaled / alpha ** 2)))


def choose_rho(t_opt, v_guess, alpha=None):
    """
    rho minimizing the radius at ``t_opt`` for variance ``v_guess``, searched over log rho in [-10, 10].
    """
    alpha = float(oms_settings.resolve(alpha, 'ALPHA'))
    result = optimize.minimize_scalar(
        lambda log_rho: confseq_radius(t_opt, v_guess, np.exp(log_rho), alpha),
        bounds=(-10.0, 10.0), method='bounded', options={'xatol': 1e-6},
    )
    return float(np.exp(result.x))


@dataclass(frozen=True)
class InferenceSpec:
    """
    Inference options of a run. ``rho`` is used as given; otherwise it is tuned
    for ``t_opt`` (default: the run's horizon) and ``v_guess``.
    """
    alpha: float = None
    rho: float = None
    t_opt: int = None
    v_guess: float = 1.0

    @property
    def level_alpha(self):
        return float(oms_settings.resolve(self.alpha, 'ALPHA'))

    def confseq(self, horizon):
        rho = self.rho if self.rho is not None else choose_rho(self.t_opt or horizon, self.v_guess, self.level_alpha)
        return ConfSeqParams(rho=float(rho), alpha=self.level_alpha)
