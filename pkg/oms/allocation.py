"""
Oracle simplex estimation and the geometry of feasible allocations.

Classes:

FeasibleSet: {w * kappa_past + (1 - w) * kappa : kappa in the simplex}.
CostFeasibleSet: Allocations reachable with a remaining budget and per-source costs.
Apportionment: Integer query counts realizing a target.

Functions:

project_simplex: Euclidean projection onto the probability simplex.
minimize_on_simplex: Grid search plus local refinement of a function on the simplex.
estimate_oracle_simplex: argmin of a variance surface, optionally cost weighted.
project, continuation: Nearest feasible allocation and the allocation of the remaining queries.
apportion: Largest remainder rounding.
cost_feasible_set: Feasible set of a budget-constrained policy.
oracle_allocation: Oracle allocation and variance of a truth-equipped scenario.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from oms.conf import oms_settings
from oms.exceptions import DegenerateSurfaceError
from oms.variance import as_simplex_point, oracle_surface, variance_at

logger = logging.getLogger(__name__)

# finite stand-in for +inf inside the bounded scalar search
_INFEASIBLE = 1e300


def project_simplex(vector):
    """
    Euclidean projection of ``vector`` onto the probability simplex.
    """
    vector = np.asarray(vector, dtype=float)
    ordered = np.sort(vector)[::-1]
    cumulative = np.cumsum(ordered) - 1
    ranks = np.arange(1, len(vector) + 1)
    last = np.flatnonzero(ordered - cumulative / ranks > 0)[-1]
    shift = cumulative[last] / (last + 1)
    projected = np.maximum(vector - shift, 0)
    return projected / projected.sum()


def simplex_grid(dim, resolution):
    """
    Every point of the simplex with coordinates on a ``resolution`` lattice, in
    lexicographic order.
    """
    steps = int(round(1 / resolution))
    for head in itertools.product(range(steps + 1), repeat=dim - 1):
        rest = steps - sum(head)
        if rest >= 0:
            yield np.array([*head, rest], dtype=float) / steps


def _edge_point(x):
    return np.array([x, 1 - x])


def _minimize_edge(function, resolution, coarse):
    grid = np.linspace(0, 1, int(round(1 / coarse)) + 1)
    values = np.array([function(_edge_point(x)) for x in grid])
    finite = np.isfinite(values)
    if not finite.any():
        raise DegenerateSurfaceError('The objective is infinite on the whole simplex.')
    best = int(np.argmin(np.where(finite, values, np.inf)))
    lower, upper = grid[max(best - 1, 0)], grid[min(best + 1, len(grid) - 1)]

    def finite_objective(x):
        value = function(_edge_point(x))
        return value if np.isfinite(value) else _INFEASIBLE

    result = optimize.minimize_scalar(
        finite_objective, bounds=(lower, upper), method='bounded', options={'xatol': resolution / 10})
    if result.success and result.fun < values[best]:
        return _edge_point(result.x), float(result.fun)
    return _edge_point(grid[best]), float(values[best])


def _finite_gradient(function, point, value, step=1e-6):
    gradient = np.zeros(len(point))
    for j in range(len(point)):
        shifted = point.copy()
        shifted[j] += step
        upper = function(project_simplex(shifted))
        shifted[j] -= 2 * step
        lower = function(project_simplex(shifted))
        if not (np.isfinite(upper) and np.isfinite(lower)):
            return None
        gradient[j] = (upper - lower) / (2 * step)
    return gradient


def _minimize_grid(function, dim, resolution, steps):
    best, best_value = None, np.inf
    for point in simplex_grid(dim, resolution):
        value = function(point)
        if value < best_value:
            best, best_value = point, value
    if best is None:
        raise DegenerateSurfaceError('The objective is infinite on the whole simplex.')
    for _ in range(steps):
        gradient = _finite_gradient(function, best, best_value)
        if gradient is None or not np.any(gradient):
            break
        size = resolution / np.max(np.abs(gradient))
        for _ in range(30):
            candidate = project_simplex(best - size * gradient)
            value = function(candidate)
            if value < best_value:
                best, best_value = candidate, value
                break
            size /= 2
        else:
            break
    return best, float(best_value)


def minimize_on_simplex(function, dim, resolution=None, coarse=None, steps=None):
    """
    Minimize ``function`` over the probability simplex of dimension ``dim``.

    Two sources: a coarse grid along the edge then a bounded scalar search of
    the bracket around the best grid point. More sources: a lattice at
    ``resolution`` followed by projected-gradient refinement. Infinite values
    are excluded; the first (lexicographically smallest) minimizer wins ties.

    Returns:
        tuple: (argmin, minimum)

    Raises:
        DegenerateSurfaceError: If ``function`` is infinite everywhere.
    """
    resolution = float(oms_settings.resolve(resolution, 'RESOLUTION'))
    if dim == 1:
        point = np.ones(1)
        value = function(point)
        if not np.isfinite(value):
            raise DegenerateSurfaceError('The objective is infinite on the whole simplex.')
        return point, float(value)
    if dim == 2:
        return _minimize_edge(function, resolution, float(oms_settings.resolve(coarse, 'COARSE_GRID')))
    return _minimize_grid(function, dim, resolution, int(oms_settings.resolve(steps, 'PG_STEPS')))


def estimate_oracle_simplex(surface, cost=None, resolution=None):
    """
    Allocation minimizing the surface's variance, times kappa^T c when ``cost`` is given.
    """
    if cost is None:
        def function(kappa):
            return variance_at(surface, kappa)
    else:
        cost = np.asarray(cost, dtype=float)

        def function(kappa):
            return variance_at(surface, kappa) * float(kappa @ cost)

    kappa, _ = minimize_on_simplex(function, len(surface.kappa_T), resolution)
    return kappa


@dataclass(frozen=True)
class FeasibleSet:
    """
    Allocations reachable when a fraction ``past_weight`` of the final horizon
    has already been collected at ``base``.
    """
    base: np.ndarray
    past_weight: float

    def member(self, kappa):
        return self.past_weight * np.asarray(self.base) + (1 - self.past_weight) * np.asarray(kappa)

    def free(self, point):
        """Simplex point whose member is ``point``."""
        if self.past_weight >= 1:
            return np.asarray(self.base, dtype=float)
        return (np.asarray(point) - self.past_weight * np.asarray(self.base)) / (1 - self.past_weight)


@dataclass(frozen=True)
class CostFeasibleSet:
    """
    Allocations reachable by spending ``budget_remaining`` at costs ``cost``
    after ``t_past`` records at ``base``; a continuation kappa buys
    floor(budget_remaining / kappa^T c) further records.
    """
    base: np.ndarray
    t_past: int
    budget_remaining: float
    cost: np.ndarray

    def additional(self, kappa):
        return int(np.floor(self.budget_remaining / float(np.asarray(kappa) @ self.cost) + 1e-9))

    def horizon(self, kappa):
        return self.t_past + self.additional(kappa)

    def past_weight(self, kappa):
        horizon = self.horizon(kappa)
        return self.t_past / horizon if horizon else 0.0

    def member(self, kappa):
        weight = self.past_weight(kappa)
        return weight * np.asarray(self.base) + (1 - weight) * np.asarray(kappa)


def cost_feasible_set(budget_spent, budget_total, kappa_past, t_past, cost):
    """
    Feasible set of a budget-constrained policy; reduces to ``FeasibleSet``
    for uniform costs.
    """
    cost = np.asarray(cost, dtype=float)
    remaining = max(float(budget_total) - float(budget_spent), 0.0)
    base = np.asarray(kappa_past, dtype=float) if t_past else np.full(len(cost), 1.0 / len(cost))
    if np.all(cost == cost[0]):
        horizon = t_past + int(np.floor(remaining / cost[0] + 1e-9))
        return FeasibleSet(base=base, past_weight=t_past / horizon if horizon else 0.0)
    return CostFeasibleSet(base=base, t_past=int(t_past), budget_remaining=remaining, cost=cost)


def continuation(target, feasible, resolution=None):
    """
    Allocation of the remaining queries whose feasible member is nearest to ``target``.
    """
    target = np.asarray(target, dtype=float)
    if isinstance(feasible, FeasibleSet):
        if feasible.past_weight >= 1:
            return np.asarray(feasible.base, dtype=float)
        return project_simplex(feasible.free(target))

    def distance(kappa):
        if feasible.additional(kappa) == 0:
            return np.inf
        return float(np.sum((feasible.member(kappa) - target) ** 2))

    try:
        kappa, _ = minimize_on_simplex(distance, len(target), resolution)
    except DegenerateSurfaceError:
        return np.asarray(feasible.base, dtype=float)
    return kappa


def project(target, feasible, resolution=None):
    """
    Nearest feasible allocation to ``target``.
    """
    if isinstance(feasible, FeasibleSet) and feasible.past_weight >= 1:
        return np.asarray(feasible.base, dtype=float)
    return feasible.member(continuation(target, feasible, resolution))


@dataclass(frozen=True)
class Apportionment:
    counts: np.ndarray
    target: np.ndarray
    n: int


def apportion(target, n):
    """
    Largest remainder apportionment of ``n`` queries to ``target``; ties go to
    the lower index.
    """
    target = as_simplex_point(target)
    quotas = n * target
    counts = np.floor(quotas + 1e-12).astype(int)
    remainders = np.round(quotas - counts, 12)
    order = sorted(range(len(target)), key=lambda d: (-remainders[d], d))
    for d in order[:n - int(counts.sum())]:
        counts[d] += 1
    return Apportionment(counts=counts, target=target, n=int(n))


def oracle_kappa(scenario, cost_weighted=False, resolution=None, mc_samples=None):
    """
    Oracle allocation of a scenario: the known value when the scenario carries
    one for the requested objective, otherwise the argmin of the oracle surface.
    """
    truth = scenario.truth
    known = truth.kappa_star if truth is not None else None
    if known is not None and (scenario.uniform_cost or bool(cost_weighted) == truth.cost_weighted):
        return as_simplex_point(known)
    cost = scenario.cost if cost_weighted else None
    return estimate_oracle_simplex(oracle_surface(scenario, mc_samples), cost=cost, resolution=resolution)


def oracle_allocation(scenario, cost_weighted=False, resolution=None, mc_samples=None):
    """
    Oracle allocation kappa* and its variance V*(kappa*).
    """
    kappa = oracle_kappa(scenario, cost_weighted, resolution, mc_samples)
    return kappa, variance_at(oracle_surface(scenario, mc_samples), kappa)
