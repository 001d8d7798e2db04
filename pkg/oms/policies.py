"""
Data-collection policies and the run loop that drives them.

Every policy is a state machine with the same step interface:
``replan_due`` / ``replan`` at re-planning points and ``next_source`` for the
next query, which raises ``EndOfRun`` once the horizon or budget is exhausted.

Round-based policies (fixed, oracle, ETC, ETG and their cost-structured
variants) split the horizon or budget into rounds. The first round of ETC and
ETG explores uniformly; every later round realizes the projection of the
current oracle-simplex estimate onto the allocations still reachable.
Within a round the planned counts are realized round-robin.

Classes:

EpsilonSchedule: Exploration probabilities of the epsilon-greedy policy.
PolicySpec: Kind and parameters of a policy.
PolicyState: Mutable state of a policy.
RoundPolicy: Fixed, oracle, ETC, ETG, ETC-CS and ETG-CS.
EpsilonGreedyPolicy: Epsilon-greedy.
Trajectory: Output of ``run_policy``.

Functions:

epsilon_schedule: Exploration probability at time t.
make_policy: Build the policy for a spec.
run_policy: Run one policy on one scenario.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from oms.allocation import apportion, continuation, cost_feasible_set, estimate_oracle_simplex, oracle_kappa
from oms.conf import oms_settings
from oms.exceptions import ConfigurationError, DegenerateSurfaceError, EndOfRun, UnderIdentificationError
from oms.gmm import MomentLog, two_step_estimate
from oms.inference import InferenceSpec, confidence_interval, confseq_radius
from oms.nuisance import NuisanceSpec, NuisanceTracker
from oms.sources import SampleStream, stream
from oms.variance import as_simplex_point, build_surface, on_policy_variance

logger = logging.getLogger(__name__)

POLICY_KINDS = ('fixed', 'oracle', 'oracle_eta_hat', 'etc', 'etg', 'eps_greedy', 'etc_cs', 'etg_cs')
COST_AWARE_KINDS = ('etc_cs', 'etg_cs')
ORACLE_KINDS = ('oracle', 'oracle_eta_hat')


@dataclass(frozen=True)
class EpsilonSchedule:
    """
    ``constant``: epsilon_t = value. ``inverse``: epsilon_t = min(1, value / t).
    """
    kind: str = 'inverse'
    value: float = 1.0

    def __post_init__(self):
        if self.kind == 'constant':
            if not 0 <= self.value <= 1:
                raise ConfigurationError('A constant exploration probability must lie in [0, 1].')
        elif self.kind == 'inverse':
            if not self.value > 0:
                raise ConfigurationError('The inverse schedule needs a positive constant.')
        else:
            raise ConfigurationError(f"Unknown epsilon schedule '{self.kind}'.")

    def __call__(self, t):
        if self.kind == 'constant':
            return float(self.value)
        return float(min(1.0, self.value / t))


def epsilon_schedule(spec, t):
    return spec(t)


@dataclass(frozen=True)
class PolicySpec:
    """
    Attributes:
        kind (str): One of ``POLICY_KINDS``.
        kappa (tuple | None): Allocation of the fixed policy.
        e (float | None): Exploration fraction of ETC/ETG and their cost variants.
        batch (float | None): ETG round size (samples, or budget for ETG-CS);
            re-planning period of epsilon-greedy.
        epsilon (EpsilonSchedule | None): Schedule of epsilon-greedy.
        label (str | None): Name used in results; defaults to ``kind``.
    """
    kind: str
    kappa: Optional[Tuple[float, ...]] = None
    e: Optional[float] = None
    batch: Optional[float] = None
    epsilon: Optional[EpsilonSchedule] = None
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigurationError(f"Unknown policy '{self.kind}'. Choose one of {POLICY_KINDS}.")
        if self.kind == 'fixed' and self.kappa is None:
            raise ConfigurationError('The fixed policy needs an allocation kappa.')
        if self.e is not None and not 0 < self.e < 1:
            raise ConfigurationError('The exploration fraction e must lie in (0, 1).')

    @property
    def name(self):
        return self.label or self.kind

    @property
    def cost_aware(self):
        return self.kind in COST_AWARE_KINDS


@dataclass
class PolicyState:
    """
    Attributes:
        phase (str): 'explore', 'commit', 'greedy' or 'fill'.
        round_index (int): Current round of a round-based policy.
        current_target (ndarray): Latest oracle-simplex estimate (or fixed target).
        projected (ndarray): Feasible allocation the current round realizes.
        counts (ndarray): Queries per source so far.
        budget_spent (float): Cost spent so far.
        plan (ndarray): Queries per source still planned in this round.
        cursor (int): Round-robin position.
    """
    counts: np.ndarray
    current_target: np.ndarray
    projected: np.ndarray = None
    phase: str = 'explore'
    round_index: int = 0
    budget_spent: float = 0.0
    plan: np.ndarray = None
    cursor: int = 0


class Policy:
    """
    Shared accounting of horizon- and budget-mode policies.

    In horizon mode every query costs one unit and the limit is ``horizon``;
    in budget mode queries cost ``cost`` and the limit is ``budget``.
    """

    def __init__(self, spec, num_sources, horizon=None, budget=None, cost=None, rng=None):
        if (horizon is None) == (budget is None):
            raise ConfigurationError('Give exactly one of horizon and budget.')
        self.spec = spec
        self.num_sources = num_sources
        self.horizon = horizon
        self.budget = float(budget) if budget is not None else None
        self.cost = np.ones(num_sources) if budget is None or cost is None else np.asarray(cost, dtype=float)
        self.limit = float(horizon) if budget is None else self.budget
        self.rng = rng
        uniform = np.full(num_sources, 1.0 / num_sources)
        self.state = PolicyState(counts=np.zeros(num_sources, dtype=int), current_target=uniform, projected=uniform)

    @property
    def t(self):
        return int(self.state.counts.sum())

    def affordable(self, source, cap=None):
        cap = self.limit if cap is None else cap
        return self.state.budget_spent + self.cost[source] <= cap + 1e-9

    def record(self, source):
        self.state.counts[source] += 1
        self.state.budget_spent += self.cost[source]

    def replan_due(self):
        return False

    def replan(self, k_hat):
        pass

    def next_source(self, history=None):
        raise NotImplementedError

    def _fill(self):
        """Greedy continuation toward the projected target while anything is affordable."""
        options = [d for d in range(self.num_sources) if self.affordable(d)]
        if not options:
            raise EndOfRun('Nothing affordable.')
        self.state.phase = 'fill'
        return self._closest(options, self.state.projected)

    def _closest(self, options, target):
        counts = self.state.counts
        t = self.t + 1
        distances = []
        for d in options:
            step = counts.astype(float)
            step[d] += 1
            distances.append(np.linalg.norm(step / t - target))
        return options[int(np.argmin(distances))]


class RoundPolicy(Policy):
    """
    Fixed allocation, ETC, ETG and their cost-structured variants.

    Args:
        rounds (list): Size of each round in budget units (samples in horizon mode).
        initial (ndarray): Allocation realized in the first round.
        adaptive (bool): Whether rounds after the first are re-planned.
    """

    def __init__(self, spec, num_sources, rounds, initial, adaptive, **kwargs):
        super().__init__(spec, num_sources, **kwargs)
        self.rounds = list(rounds)
        self.caps = np.cumsum(self.rounds)
        self.caps[-1] = self.limit
        self.adaptive = adaptive
        self.state.current_target = np.asarray(initial, dtype=float)
        self.state.phase = 'explore' if adaptive else 'commit'
        self._start_round(0, np.asarray(initial, dtype=float))

    def _start_round(self, index, kappa):
        available = self.caps[index] - self.state.budget_spent
        size = int(np.floor(available / float(kappa @ self.cost) + 1e-9)) if available > 0 else 0
        self.state.round_index = index
        self.state.plan = apportion(kappa, size).counts
        self.state.cursor = 0 if index == 0 else self.state.cursor
        if index == 0 and not self.adaptive:
            self.state.projected = np.asarray(kappa, dtype=float)

    def _planned(self):
        """Next planned source that fits the round cap, dropping unaffordable plans."""
        plan = self.state.plan
        cap = self.caps[self.state.round_index]
        for offset in range(self.num_sources):
            d = (self.state.cursor + offset) % self.num_sources
            if plan[d] > 0 and not self.affordable(d, cap):
                plan[d] = 0
            if plan[d] > 0:
                return d
        return None

    def replan_due(self):
        return (self.adaptive
                and self.state.round_index + 1 < len(self.rounds)
                and self._planned() is None)

    def replan(self, k_hat):
        index = self.state.round_index + 1
        target = self.state.current_target if k_hat is None else np.asarray(k_hat, dtype=float)
        t = self.t
        base = self.state.counts / t if t else np.full(self.num_sources, 1.0 / self.num_sources)
        feasible = cost_feasible_set(self.state.budget_spent, self.caps[index], base, t, self.cost)
        kappa = continuation(target, feasible)
        self.state.current_target = target
        self.state.projected = feasible.member(kappa)
        self.state.phase = 'commit' if len(self.rounds) == 2 else 'greedy'
        self._start_round(index, kappa)
        logger.debug('Round %d: target %s, projected %s.', index, np.round(target, 4), np.round(self.state.projected, 4))

    def next_source(self, history=None):
        d = self._planned()
        if d is None:
            return self._fill()
        self.state.plan[d] -= 1
        self.state.cursor = (d + 1) % self.num_sources
        return d


class EpsilonGreedyPolicy(Policy):
    """
    With probability epsilon_t query a uniformly random source, otherwise the
    source that moves the realized allocation closest to the current estimate.
    Re-plans every ``period`` queries.
    """

    def __init__(self, spec, num_sources, period, **kwargs):
        super().__init__(spec, num_sources, **kwargs)
        if self.rng is None:
            raise ConfigurationError('Epsilon-greedy needs a random stream.')
        self.schedule = spec.epsilon or EpsilonSchedule()
        self.period = int(period)
        self._replanned_at = 0
        self.state.phase = 'greedy'

    def replan_due(self):
        t = self.t
        return t > 0 and t % self.period == 0 and t != self._replanned_at and t < self.limit

    def replan(self, k_hat):
        if k_hat is not None:
            self.state.current_target = np.asarray(k_hat, dtype=float)
            self.state.projected = self.state.current_target
        self._replanned_at = self.t

    def next_source(self, history=None):
        options = [d for d in range(self.num_sources) if self.affordable(d)]
        if not options:
            raise EndOfRun('Horizon exhausted.')
        u = self.rng.random()
        if u <= self.schedule(self.t + 1):
            return options[int(self.rng.integers(len(options)))]
        return self._closest(options, self.state.current_target)


def _exploration_rounds(total, explore, batch=None, greedy=False):
    rest = total - explore
    if not greedy:
        return [explore, rest]
    batch = batch or max(1.0, 0.1 * rest)
    whole = int(rest // batch)
    rounds = [explore] + [batch] * whole
    if rest - whole * batch > 1e-9:
        rounds.append(rest - whole * batch)
    return rounds


def make_policy(spec, scenario, horizon=None, budget=None, rng=None, kappa_star=None):
    """
    Build the policy object for ``spec``.

    Args:
        spec (PolicySpec): Policy kind and parameters.
        scenario (Scenario): Supplies the number of sources and the cost vector.
        horizon (int | None): Number of queries (horizon mode).
        budget (float | None): Total budget (budget mode).
        rng (Generator | None): The policy's own random stream.
        kappa_star (ndarray | None): Oracle allocation for the oracle kinds.
    """
    num_sources = scenario.num_sources
    kwargs = dict(horizon=horizon, budget=budget, cost=scenario.cost, rng=rng)
    total = float(horizon) if budget is None else float(budget)
    uniform = np.full(num_sources, 1.0 / num_sources)
    if spec.cost_aware and budget is None:
        raise ConfigurationError(f"Policy '{spec.name}' needs a budget.")

    if spec.kind == 'fixed':
        return RoundPolicy(spec, num_sources, [total], as_simplex_point(spec.kappa), False, **kwargs)
    if spec.kind in ORACLE_KINDS:
        if kappa_star is None:
            raise ConfigurationError(f"Policy '{spec.name}' needs the oracle allocation.")
        return RoundPolicy(spec, num_sources, [total], as_simplex_point(kappa_star), False, **kwargs)
    if spec.kind == 'eps_greedy':
        if budget is not None:
            raise ConfigurationError('Epsilon-greedy runs in horizon mode only.')
        period = spec.batch or int(oms_settings.CHECKPOINT_EVERY)
        return EpsilonGreedyPolicy(spec, num_sources, period, **kwargs)

    samples = total if budget is None else total / float(uniform @ scenario.cost)
    e = spec.e if spec.e is not None else 1 / np.sqrt(samples)
    if budget is None:
        explore = max(1, int(np.floor(total * e + 1e-9)))
        batch = spec.batch or max(1, int(round(0.1 * (total - explore))))
        if spec.kind in ('etg', 'etg_cs') and batch > total - explore:
            raise ConfigurationError('The ETG batch size exceeds the post-exploration horizon.')
    else:
        explore = total * e
        batch = spec.batch
    greedy = spec.kind in ('etg', 'etg_cs')
    return RoundPolicy(spec, num_sources, _exploration_rounds(total, explore, batch, greedy), uniform, True, **kwargs)


@dataclass
class Trajectory:
    """
    Attributes:
        policy (str): Policy label.
        log (MomentLog): Every query of the run.
        checkpoints (list): Estimate records at checkpoint times.
        flags (Counter): Numerical flags raised during the run.
        kappa_star (ndarray | None): Oracle allocation the run was compared against.
    """
    policy: str
    log: MomentLog
    checkpoints: list = field(default_factory=list)
    flags: Counter = field(default_factory=Counter)
    kappa_star: Optional[np.ndarray] = None

    @property
    def final(self):
        return self.checkpoints[-1]


class _Run:
    """
    Mutable context of ``run_policy``.
    """

    def __init__(self, policy, scenario, tracker, log, confseq, resolution):
        self.policy = policy
        self.scenario = scenario
        self.tracker = tracker
        self.log = log
        self.confseq = confseq
        self.resolution = resolution
        self.flags = Counter()
        self.theta = None
        self.k_hat = None

    def flag(self, kind, message=''):
        if not self.flags[kind]:
            logger.warning('%s: %s %s', self.policy.spec.name, kind.replace('_', ' '), message)
        self.flags[kind] += 1

    def estimate(self):
        fit = two_step_estimate(self.log, warm_start=self.theta)
        if fit.diagnostics['ridge_applied']:
            self.flag('ridge_applied')
        if fit.diagnostics['boundary_hit']:
            self.flag('boundary_hit')
        self.theta = fit.theta
        return fit

    def plan(self):
        self.tracker.refit(self.log, boundary=True)
        if self.tracker.latest.untrained:
            self.flag('untrained_nuisance', f"at t={len(self.log)}")
        k_hat = None
        try:
            fit = self.estimate()
            surface = build_surface(self.log, fit.theta)
            cost = self.policy.cost if self.policy.spec.cost_aware else None
            k_hat = estimate_oracle_simplex(surface, cost=cost, resolution=self.resolution)
        except UnderIdentificationError as exc:
            self.flag('under_identified', str(exc))
        except DegenerateSurfaceError as exc:
            self.flag('degenerate_surface', str(exc))
        if k_hat is not None:
            self.k_hat = k_hat
        self.policy.replan(k_hat)

    def checkpoint(self):
        log = self.log
        t = len(log)
        record = {
            't': t,
            'budget_spent': log.budget_spent,
            'kappa': (log.counts / t).tolist(),
            'k_hat': None if self.k_hat is None else self.k_hat.tolist(),
            'theta': None, 'beta': None, 'v_hat': None,
            'ci_low': None, 'ci_high': None, 'confseq_radius': None,
        }
        try:
            fit = self.estimate()
        except UnderIdentificationError as exc:
            self.flag('under_identified', str(exc))
            return record
        v_hat = on_policy_variance(log, fit.theta)
        interval = confidence_interval(fit.beta, v_hat, t, self.confseq.alpha)
        record.update(
            theta=fit.theta.tolist(),
            beta=fit.beta,
            v_hat=v_hat,
            ci_low=interval.lower,
            ci_high=interval.upper,
            confseq_radius=confseq_radius(t, v_hat, self.confseq.rho, self.confseq.alpha),
        )
        return record


def run_policy(spec, scenario, horizon=None, budget=None, seed=0, run=0, nuisance=None,
               inference=None, checkpoint_every=None, resolution=None):
    """
    Run one policy on one scenario.

    Random streams are derived from (seed, run): stream d feeds source d and
    stream |D| is the policy's own. Nuisances are refit on the configured
    schedule and at every re-planning point; each record is evaluated with the
    latest snapshot fit on strictly earlier records.

    Returns:
        Trajectory
    """
    nuisance = nuisance or NuisanceSpec()
    if spec.kind == 'oracle':
        nuisance = NuisanceSpec(kind='oracle')
    inference = inference or InferenceSpec()
    checkpoint_every = int(oms_settings.resolve(checkpoint_every, 'CHECKPOINT_EVERY'))

    kappa_star = None
    if spec.kind in ORACLE_KINDS:
        cost_weighted = budget is not None and not scenario.uniform_cost
        kappa_star = oracle_kappa(scenario, cost_weighted=cost_weighted, resolution=resolution)

    model = scenario.model
    policy = make_policy(spec, scenario, horizon=horizon, budget=budget,
                         rng=stream(seed, run, scenario.num_sources), kappa_star=kappa_star)
    streams = [SampleStream(sampler, stream(seed, run, d)) for d, sampler in enumerate(scenario.samplers)]
    log = MomentLog(model)
    tracker = NuisanceTracker(model, nuisance, scenario)
    horizon_hint = horizon if horizon is not None else int(budget / float(np.mean(scenario.cost)))
    context = _Run(policy, scenario, tracker, log, inference.confseq(horizon_hint), resolution)
    checkpoints = []

    while True:
        if policy.replan_due():
            context.plan()
        try:
            source = policy.next_source(log)
        except EndOfRun:
            break
        t = len(log) + 1
        log.append(source, streams[source].next(), tracker.current(t), policy.cost[source])
        policy.record(source)
        tracker.refit(log)
        if t % checkpoint_every == 0:
            checkpoints.append(context.checkpoint())

    if not len(log):
        raise ConfigurationError(f"Policy '{spec.name}' made no queries.")
    if not checkpoints or checkpoints[-1]['t'] != len(log):
        checkpoints.append(context.checkpoint())
    return Trajectory(policy=spec.name, log=log, checkpoints=checkpoints, flags=context.flags, kappa_star=kappa_star)
