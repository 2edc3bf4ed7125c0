"""Adaptive LNS episode: pair selection, acceptance, rewards, metric updates.

One episode is a strictly sequential chain. The three metric structures are
updated together on every iteration for the selected pair only: smoothed
selection weights (reset each episode), accumulated fitness, and the
destroy x repair synergy matrix (both persistent until an explicit reset).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, SelectionError, StateError
from .operators import destroy_count, make_callable
from .operators.base import BuiltinImpl, OperatorRecord
from .problems import Instance, RouteSolution, TourSolution, TSP, solution_cost
from .rand import make_rng


@dataclass
class EpisodeConfig:
    """Inner-loop settings; defaults follow the evolution-phase configuration."""

    iterations: int = 100
    initial_temperature: float = 100.0
    cooling_rate: float = 0.97
    destruction_ratio: float = 0.2
    smoothing: float = 0.5
    rewards: tuple[float, float, float, float] = (1.5, 1.2, 0.8, 0.1)
    # wall-clock cap for sandboxed operator calls: factor x median builtin time
    time_cap_factor: float = 50.0
    time_cap_min: float = 0.1

    def validate(self):
        if not 0 < self.cooling_rate < 1:
            raise ConfigError("cooling rate must be in (0, 1)")
        if not 0 < self.smoothing < 1:
            raise ConfigError("smoothing factor must be in (0, 1)")
        if self.initial_temperature <= 0:
            raise ConfigError("initial temperature must be positive")
        s1, s2, s3, s4 = self.rewards
        if not (s1 >= s2 >= s3 >= s4 > 0):
            raise ConfigError("rewards must be nonincreasing and positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")

    def sigma(self, tier: int) -> float:
        return self.rewards[tier - 1]


@dataclass
class PortfolioState:
    """Adaptive weights W, accumulated fitness F and synergy matrix S."""

    weights_d: np.ndarray
    weights_r: np.ndarray
    fitness_d: np.ndarray
    fitness_r: np.ndarray
    synergy: np.ndarray

    @classmethod
    def fresh(cls, n_destroy: int, n_repair: int) -> "PortfolioState":
        return cls(np.ones(n_destroy), np.ones(n_repair),
                   np.zeros(n_destroy), np.zeros(n_repair),
                   np.zeros((n_destroy, n_repair)))

    def reset_weights(self):
        self.weights_d[:] = 1.0
        self.weights_r[:] = 1.0

    def reset_metrics(self):
        """Zero fitness and synergy; weights are left untouched."""
        self.fitness_d[:] = 0.0
        self.fitness_r[:] = 0.0
        self.synergy[:] = 0.0

    def drop(self, destroy_idx: list[int], repair_idx: list[int]):
        """Remove pruned rows/columns and re-index the survivors."""
        keep_d = [i for i in range(len(self.weights_d)) if i not in set(destroy_idx)]
        keep_r = [j for j in range(len(self.weights_r)) if j not in set(repair_idx)]
        self.weights_d = self.weights_d[keep_d]
        self.fitness_d = self.fitness_d[keep_d]
        self.weights_r = self.weights_r[keep_r]
        self.fitness_r = self.fitness_r[keep_r]
        self.synergy = self.synergy[np.ix_(keep_d, keep_r)]

    def append_slot(self, kind: str):
        if kind == "destroy":
            self.weights_d = np.append(self.weights_d, 1.0)
            self.fitness_d = np.append(self.fitness_d, 0.0)
            self.synergy = np.vstack([self.synergy, np.zeros((1, self.synergy.shape[1]))])
        else:
            self.weights_r = np.append(self.weights_r, 1.0)
            self.fitness_r = np.append(self.fitness_r, 0.0)
            self.synergy = np.hstack([self.synergy, np.zeros((self.synergy.shape[0], 1))])

    def marginals_consistent(self, tol: float = 1e-9) -> bool:
        return (np.allclose(self.fitness_d, self.synergy.sum(axis=1), atol=tol)
                and np.allclose(self.fitness_r, self.synergy.sum(axis=0), atol=tol))


class TraceRow(NamedTuple):
    iteration: int
    current_cost: float
    best_cost: float
    destroy_id: str
    repair_id: str
    tier: int
    temperature: float


@dataclass
class EpisodeResult:
    best_solution: TourSolution | RouteSolution
    best_cost: float
    trace: list[TraceRow]
    final_temperature: float
    global_best: TourSolution | RouteSolution = None
    global_best_cost: float = math.inf


def roulette_select(weights, rng) -> int:
    """Index i with probability w_i / sum(w)."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise SelectionError("roulette weights must be positive and finite")
    cum = np.cumsum(w)
    r = rng.random() * cum[-1]
    return min(int(np.searchsorted(cum, r, side="right")), w.size - 1)


def classify_and_accept(cost_new, cost_curr, cost_best, temperature, rng) -> tuple[int, bool]:
    """Hierarchical reward tier and Metropolis acceptance.

    Tier 1: new global best. Tier 2: improves the current solution. Tier 3:
    non-improving but accepted with probability exp(-delta/T). Tier 4: rejected.
    """
    if cost_new < cost_best:
        return 1, True
    if cost_new < cost_curr:
        return 2, True
    if math.exp(-(cost_new - cost_curr) / temperature) > rng.random():
        return 3, True
    return 4, False


def apply_reward(state: PortfolioState, i: int, j: int, sigma: float, lam: float):
    """One synchronized update of weights, fitness and synergy for pair (i, j)."""
    if not (0 <= i < len(state.weights_d) and 0 <= j < len(state.weights_r)):
        raise StateError(f"pair ({i}, {j}) outside portfolio dimensions")
    state.weights_d[i] = lam * state.weights_d[i] + (1 - lam) * sigma
    state.weights_r[j] = lam * state.weights_r[j] + (1 - lam) * sigma
    state.fitness_d[i] += sigma
    state.fitness_r[j] += sigma
    state.synergy[i, j] += sigma


def random_solution(instance: Instance, rng):
    """Random feasible starting point: shuffled tour, or sequential random fill."""
    if instance.kind == TSP:
        return TourSolution([int(v) for v in rng.permutation(instance.n)])
    customers = instance.customers()
    order = list(customers)
    rng.shuffle(order)
    routes, route, load = [], [], 0
    for c in order:
        demand = int(instance.demands[c])
        if route and load + demand > instance.capacity:
            routes.append(route)
            route, load = [], 0
        route.append(c)
        load += demand
    if route:
        routes.append(route)
    return RouteSolution(routes)


@dataclass
class CompiledPool:
    """Operator records resolved to callables for one evaluation context."""

    records: list[OperatorRecord]
    fns: list
    sandbox: object = None

    @classmethod
    def compile(cls, records, sandbox=None) -> "CompiledPool":
        return cls(list(records), [make_callable(r, sandbox) for r in records], sandbox)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]


def run_episode(instance: Instance, pool_d: CompiledPool, pool_r: CompiledPool,
                state: PortfolioState, config: EpisodeConfig, rng,
                best: tuple | None = None) -> EpisodeResult:
    """One adaptive LNS episode of `config.iterations` steps.

    Weights and temperature are reset on entry; fitness and synergy keep
    accumulating in `state`. `best` optionally carries a (solution, cost)
    incumbent from earlier episodes so tier-1 rewards stay globally scoped.
    An operator that raises mid-episode scores the lowest reward, has the
    failure logged against its record, and the episode continues.
    """
    config.validate()
    if not pool_d.records or not pool_r.records:
        raise ConfigError("both operator pools must be nonempty")
    if len(pool_d.records) != len(state.weights_d) or len(pool_r.records) != len(state.weights_r):
        raise StateError("portfolio state dimensions do not match the populations")
    state.reset_weights()
    temperature = config.initial_temperature
    x_curr = random_solution(instance, rng)
    cost_curr = solution_cost(instance, x_curr)
    ep_best, ep_best_cost = x_curr.copy(), cost_curr
    if best is None:
        g_best, g_best_cost = x_curr.copy(), cost_curr
    else:
        g_best, g_best_cost = best
    cnt = destroy_count(len(x_curr.tour) if instance.kind == TSP else len(x_curr.customers()),
                        config.destruction_ratio)
    builtin_times: list[float] = []
    trace = []
    for it in range(1, config.iterations + 1):
        i = roulette_select(state.weights_d, rng)
        j = roulette_select(state.weights_r, rng)
        _update_sandbox_cap(pool_d, pool_r, builtin_times, config)
        stage = "destroy"
        try:
            t0 = time.perf_counter()
            outcome = pool_d.fns[i](x_curr, cnt, instance, rng)
            _note_time(pool_d.records[i], time.perf_counter() - t0, builtin_times)
            stage = "repair"
            t0 = time.perf_counter()
            candidate = pool_r.fns[j](outcome.partial, outcome.removed, instance, rng)
            _note_time(pool_r.records[j], time.perf_counter() - t0, builtin_times)
            cost_new = solution_cost(instance, candidate)
        except Exception:
            (pool_d.records[i] if stage == "destroy" else pool_r.records[j]).failures += 1
            apply_reward(state, i, j, config.sigma(4), config.smoothing)
            trace.append(TraceRow(it, float(cost_curr), float(ep_best_cost),
                                  pool_d.records[i].id, pool_r.records[j].id, 4,
                                  float(temperature)))
            temperature *= config.cooling_rate
            continue
        tier, accepted = classify_and_accept(cost_new, cost_curr, g_best_cost,
                                             temperature, rng)
        if tier == 1:
            g_best, g_best_cost = candidate.copy(), cost_new
        if accepted:
            x_curr, cost_curr = candidate, cost_new
            if cost_new < ep_best_cost:
                ep_best, ep_best_cost = candidate.copy(), cost_new
        apply_reward(state, i, j, config.sigma(tier), config.smoothing)
        trace.append(TraceRow(it, float(cost_curr), float(ep_best_cost),
                              pool_d.records[i].id, pool_r.records[j].id, tier,
                              float(temperature)))
        temperature *= config.cooling_rate
    return EpisodeResult(best_solution=ep_best, best_cost=float(ep_best_cost),
                         trace=trace, final_temperature=float(temperature),
                         global_best=g_best, global_best_cost=float(g_best_cost))


def _note_time(record: OperatorRecord, elapsed: float, builtin_times: list[float]):
    if isinstance(record.impl, BuiltinImpl):
        builtin_times.append(elapsed)


def _update_sandbox_cap(pool_d, pool_r, builtin_times, config):
    sandbox = pool_d.sandbox or pool_r.sandbox
    if sandbox is None or len(builtin_times) < 5:
        return
    cap = max(config.time_cap_min,
              config.time_cap_factor * float(np.median(builtin_times)))
    sandbox.call_timeout = cap


def run_evaluation_phase(instances, pool_d: CompiledPool, pool_r: CompiledPool,
                         config: EpisodeConfig, episodes: int, seed: int):
    """K independent episodes per instance from one derivable seed.

    Episode (instance b, repetition k) always runs on the stream
    make_rng(seed, b, k), so any single episode can be replayed in isolation.
    Returns the accumulated portfolio state and the per-instance mean of the
    episode-best costs.
    """
    if episodes < 1:
        raise ConfigError("episode count must be at least 1")
    instances = list(instances)
    if not instances:
        raise ConfigError("instance batch must be nonempty")
    state = PortfolioState.fresh(len(pool_d.records), len(pool_r.records))
    scores = []
    for b, instance in enumerate(instances):
        best = None
        episode_costs = []
        for k in range(episodes):
            result = run_episode(instance, pool_d, pool_r, state, config,
                                 make_rng(seed, b, k), best=best)
            best = (result.global_best, result.global_best_cost)
            episode_costs.append(result.best_cost)
        scores.append(float(np.mean(episode_costs)))
    return state, scores
