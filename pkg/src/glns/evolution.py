"""Evolution orchestration: seeding, pruning, action dispatch, state resets.

One generation = one adaptive LNS episode per training instance. Every K
generations the manager ranks both pools by accumulated fitness, prunes the
bottom M, replenishes the vacancies through the code-generation gateway
(selection still sees the survivors' fitness and synergy), and only then
zeroes the metric structures so newcomers compete on equal footing.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codegen import CodegenGateway, GenerationRequest
from .engine import (CompiledPool, EpisodeConfig, PortfolioState, random_solution,
                     run_episode)
from .errors import (ConfigError, GlnsError, ParseError, ReplenishError,
                     SandboxUnavailableError, SeedingError, SelectionError)
from .instances import GeneratorConfig, generate
from .operators import (BUILTINS, DESTROY, REPAIR, SEED_DESTROY, SEED_REPAIR,
                        builtin_record, destroy_count, make_callable)
from .operators.base import BuiltinImpl, DestroyOutcome, OperatorRecord, jitter_one_param
from . import opsources
from .problems import TSP, check_feasible, solution_cost
from .rand import make_rng

STRATEGIES = ("mutation", "homogeneous", "synergistic")

# rng stream tags
_SEED_STREAM = 1
_EPISODE_STREAM = 2
_MANAGE_STREAM = 3


@dataclass
class Population:
    records: list[OperatorRecord]
    capacity: int = 5

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate operator ids: {ids}")
        if len(self.records) > self.capacity:
            raise ConfigError("population exceeds capacity")

    def ids(self):
        return [r.id for r in self.records]

    def add(self, record: OperatorRecord):
        if record.id in self.ids():
            raise ConfigError(f"duplicate operator id {record.id}")
        if len(self.records) >= self.capacity:
            raise ConfigError("population already at capacity")
        self.records.append(record)

    def vacancies(self) -> int:
        return self.capacity - len(self.records)


@dataclass
class EvolutionConfig:
    max_generations: int = 200
    capacity: int = 5
    prune_count: int = 2
    manage_every: int = 10
    strategy_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    filter_size: int = 20
    filter_trials: int = 3
    filter_budget: float = 1.0
    backend_attempts: int = 10
    synergy_selection: str = "argmax"    # or "roulette"

    def validate(self):
        self.episode.validate()
        if self.prune_count >= self.capacity:
            raise ConfigError("prune count must be below the population capacity")
        if self.manage_every < 1:
            raise ConfigError("management period must be at least 1")
        if abs(sum(self.strategy_weights) - 1.0) > 1e-9 or min(self.strategy_weights) < 0:
            raise ConfigError("strategy weights must be a distribution")
        if self.synergy_selection not in ("argmax", "roulette"):
            raise ConfigError("synergy selection must be argmax or roulette")


@dataclass
class FilterReport:
    passed: bool
    reason: str | None = None
    elapsed: float = 0.0


@dataclass
class EvolutionState:
    kind: str
    pop_d: Population
    pop_r: Population
    portfolio: PortfolioState
    generation: int
    seed: int
    best_costs: dict = field(default_factory=dict)
    best_solutions: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    birth_counter: int = 0
    record_counter: int = 0

    def best_score(self) -> float:
        if not self.best_costs:
            return float("inf")
        return float(np.mean(list(self.best_costs.values())))


# --- record construction ------------------------------------------------------

def record_from_artifact(role: str, source: str, description: str,
                         rec_id: str, birth: int) -> OperatorRecord:
    """Build a generated record; template-marked source runs in process."""
    marker = opsources.parse_marker(source)
    if marker and marker[0] in BUILTINS and BUILTINS[marker[0]].kind == role:
        impl = BuiltinImpl(marker[0], marker[1])
    else:
        from .operators.base import SourceImpl
        impl = SourceImpl(source)
    return OperatorRecord(id=rec_id, kind=role, provenance="generated",
                          description=description or f"generated {role}",
                          impl=impl, source=source, birth=birth)


def _seed_record(name: str, birth: int) -> OperatorRecord:
    spec = BUILTINS[name]
    rec = builtin_record(name, rec_id=name, birth=birth)
    rec.source = opsources.render_source(name, dict(spec.defaults))
    return rec


# --- pre-evaluation filter ------------------------------------------------------

def _filter_instances(kind: str, size: int, trials: int):
    return [generate(GeneratorConfig(kind, size, seed=9100 + t)) for t in range(trials)]


def pre_evaluation_filter(record: OperatorRecord, kind: str,
                          config: EvolutionConfig, sandbox=None) -> FilterReport:
    """Sanity check on small instances before a record may enter a population.

    Destroy candidates are paired with greedy insertion, repair candidates
    with random removal. Pass requires no error, contract-conforming output
    and per-call wall clock within the budget. Sandbox unavailability is an
    infrastructure error, not a candidate failure.
    """
    try:
        fn = make_callable(record, sandbox)
    except SandboxUnavailableError:
        raise
    except Exception as exc:
        return FilterReport(False, f"load: {exc}")
    if sandbox is not None:
        sandbox.call_timeout = config.filter_budget
    partner_name = "greedy_insertion" if record.kind == DESTROY else "random_removal"
    partner = BUILTINS[partner_name].make({})
    started = time.perf_counter()
    for t, instance in enumerate(_filter_instances(kind, config.filter_size,
                                                   config.filter_trials)):
        rng = make_rng(9900, t)
        sol = random_solution(instance, rng)
        elements = sol.tour if instance.kind == TSP else sol.customers()
        cnt = destroy_count(len(elements), config.episode.destruction_ratio)
        try:
            call_start = time.perf_counter()
            if record.kind == DESTROY:
                outcome = fn(sol, cnt, instance, rng)
                elapsed = time.perf_counter() - call_start
                issue = _destroy_violation(elements, outcome, cnt)
                if issue:
                    return FilterReport(False, issue)
                repaired = partner(outcome.partial, outcome.removed, instance, rng)
            else:
                outcome = partner(sol, cnt, instance, rng)
                call_start = time.perf_counter()
                repaired = fn(outcome.partial, outcome.removed, instance, rng)
                elapsed = time.perf_counter() - call_start
        except SandboxUnavailableError:
            raise
        except Exception as exc:
            return FilterReport(False, f"{type(exc).__name__}: {exc}")
        if elapsed > config.filter_budget:
            return FilterReport(False, f"timeout: call took {elapsed:.2f}s")
        report = check_feasible(instance, repaired)
        if not report.ok:
            return FilterReport(False, str(report.violations[0]))
        cost = solution_cost(instance, repaired)
        if not np.isfinite(cost) or cost < 0:
            return FilterReport(False, f"non-finite cost {cost}")
    return FilterReport(True, None, time.perf_counter() - started)


def _destroy_violation(original_elements, outcome, cnt) -> str | None:
    if not isinstance(outcome, DestroyOutcome):
        return f"destroy returned {type(outcome).__name__}, expected DestroyOutcome"
    removed = list(outcome.removed)
    if len(removed) != cnt:
        return f"removed {len(removed)} elements, expected {cnt}"
    partial = (outcome.partial.tour if hasattr(outcome.partial, "tour")
               else outcome.partial.customers())
    combined = sorted(removed + list(partial))
    if combined != sorted(original_elements):
        return "removed + partial is not a disjoint cover of the original elements"
    return None


# --- population management ------------------------------------------------------

def prune_order(fitness, births, count: int) -> list[int]:
    """Indices to prune: lowest fitness first, ties prune the younger record."""
    order = sorted(range(len(fitness)), key=lambda i: (fitness[i], -births[i]))
    return sorted(order[:count])


def prune(pop_d: Population, pop_r: Population, portfolio: PortfolioState,
          count: int) -> tuple[list[str], list[str]]:
    """Drop the bottom `count` of each pool and re-index the portfolio."""
    if count >= min(len(pop_d.records), len(pop_r.records)):
        raise ConfigError("prune count must stay below both population sizes")
    drop_d = prune_order(portfolio.fitness_d, [r.birth for r in pop_d.records], count)
    drop_r = prune_order(portfolio.fitness_r, [r.birth for r in pop_r.records], count)
    removed_d = [pop_d.records[i].id for i in drop_d]
    removed_r = [pop_r.records[i].id for i in drop_r]
    pop_d.records = [r for i, r in enumerate(pop_d.records) if i not in set(drop_d)]
    pop_r.records = [r for i, r in enumerate(pop_r.records) if i not in set(drop_r)]
    portfolio.drop(drop_d, drop_r)
    return removed_d, removed_r


def choose_mutation_action(rank: int, pool_size: int, rng) -> str:
    """Parameter calibration for top-ranked parents, logic evolution for the tail."""
    if not 0 <= rank < pool_size:
        raise SelectionError(f"rank {rank} outside pool of {pool_size}")
    if rank < pool_size / 3:
        return "m2"
    if rank >= 2 * pool_size / 3:
        return "m1"
    return "m1" if rng.random() < 0.5 else "m2"


def _fitness_draw(fitness, rng, exclude: int | None = None) -> int:
    f = np.asarray(fitness, dtype=float)
    floor = 0.01 * float(f.mean()) + 1e-9
    weights = f + floor
    if exclude is not None:
        weights = weights.copy()
        weights[exclude] = 0.0
    total = weights.sum()
    if total <= 0:
        raise SelectionError("no drawable parent")
    r = rng.random() * total
    return min(int(np.searchsorted(np.cumsum(weights), r, side="right")), len(weights) - 1)


def select_homogeneous_parents(population: Population, fitness, rng):
    """Two distinct parents, probability proportional to fitness plus a floor."""
    if len(population.records) < 2:
        raise SelectionError("need at least two records for crossover")
    first = _fitness_draw(fitness, rng)
    second = _fitness_draw(fitness, rng, exclude=first)
    return population.records[first], population.records[second]


def select_synergy_pair(portfolio: PortfolioState, rng, mode: str = "argmax"):
    """The (destroy, repair) index pair guiding joint crossover."""
    synergy = portfolio.synergy
    if synergy.size and synergy.max() > 0:
        if mode == "roulette":
            flat = synergy.ravel()
            r = rng.random() * flat.sum()
            idx = min(int(np.searchsorted(np.cumsum(flat), r, side="right")),
                      flat.size - 1)
            return divmod(idx, synergy.shape[1])
        i, j = np.argwhere(synergy == synergy.max())[0]
        return int(i), int(j)
    i = int(np.argmax(portfolio.fitness_d)) if len(portfolio.fitness_d) else 0
    j = int(np.argmax(portfolio.fitness_r)) if len(portfolio.fitness_r) else 0
    return i, j


def reset_metrics(portfolio: PortfolioState) -> PortfolioState:
    portfolio.reset_metrics()
    return portfolio


# --- seeding and replenishment ---------------------------------------------------

def seed_populations(kind: str, gateway: CodegenGateway, config: EvolutionConfig,
                     seed: int, sandbox=None) -> tuple[Population, Population, int, int]:
    """Expert seeds plus generated fills; every generated record is filtered."""
    config.validate()
    birth = 0
    pop_d = Population([], capacity=config.capacity)
    pop_r = Population([], capacity=config.capacity)
    for name in SEED_DESTROY:
        pop_d.add(_seed_record(name, birth))
        birth += 1
    for name in SEED_REPAIR:
        pop_r.add(_seed_record(name, birth))
        birth += 1
    rng = make_rng(seed, _SEED_STREAM)
    counter = 0
    unfilled = []
    for pop, action, role in ((pop_d, "i1", DESTROY), (pop_r, "i2", REPAIR)):
        while pop.vacancies() > 0:
            admitted = False
            for attempt in range(config.backend_attempts):
                counter += 1
                request = GenerationRequest(action=action, problem_kind=kind,
                                            references=list(pop.records))
                try:
                    response = gateway.generate(request, salt=counter)
                    role_got, source = response.artifacts[0]
                    rec = record_from_artifact(role_got, source, response.description,
                                               f"{action}-0-{counter}", birth)
                except (ParseError, GlnsError):
                    continue
                report = pre_evaluation_filter(rec, kind, config, sandbox)
                if report.passed:
                    pop.add(rec)
                    birth += 1
                    admitted = True
                    break
            if not admitted:
                unfilled.append(f"{role} slot {len(pop.records)}")
                break
    if unfilled:
        raise SeedingError(f"could not fill: {', '.join(unfilled)}")
    return pop_d, pop_r, birth, counter


def _sample_strategy(weights, rng, allow_homo, allow_joint) -> str:
    w = list(weights)
    if not allow_homo:
        w[1] = 0.0
    if not allow_joint:
        w[2] = 0.0
    total = sum(w)
    if total <= 0:
        return "mutation"
    r = rng.random() * total
    acc = 0.0
    for name, weight in zip(STRATEGIES, w):
        acc += weight
        if r <= acc and weight > 0:
            return name
    return "mutation"


def _rank_of(index: int, fitness) -> int:
    """Rank by descending fitness; ties resolved toward the lower index."""
    order = sorted(range(len(fitness)), key=lambda i: (-fitness[i], i))
    return order.index(index)


def _clone_elite(pop: Population, fitness, rng, rec_id: str, birth: int) -> OperatorRecord:
    best = int(np.argmax(fitness)) if len(fitness) else 0
    elite = pop.records[best]
    if isinstance(elite.impl, BuiltinImpl):
        params, key = jitter_one_param(elite.impl.name, dict(elite.impl.params), rng)
        source = opsources.render_source(elite.impl.name, _full_params(elite.impl.name, params))
        return record_from_artifact(elite.kind, source,
                                    f"clone of {elite.id} with jittered {key or 'params'}",
                                    rec_id, birth)
    rec = OperatorRecord(id=rec_id, kind=elite.kind, provenance="generated",
                         description=f"clone of {elite.id}", impl=elite.impl,
                         source=elite.source, birth=birth)
    return rec


def _full_params(name: str, params: dict) -> dict:
    merged = dict(BUILTINS[name].defaults)
    merged.update(params)
    return merged


def replenish(pop_d: Population, pop_r: Population, portfolio: PortfolioState,
              gateway: CodegenGateway, config: EvolutionConfig, kind: str,
              rng, generation: int, birth: int, counter: int,
              sandbox=None) -> tuple[list[dict], int, int]:
    """Fill both pools back to capacity; returns (action log, birth, counter).

    Selection reads the surviving records' fitness/synergy, so this runs
    before the post-management metric reset. Joint crossover is atomic: both
    children are admitted or the pair is discarded and the strategy resampled.
    """
    actions = []
    budget = config.backend_attempts * max(1, pop_d.vacancies() + pop_r.vacancies())
    spent = 0
    while pop_d.vacancies() > 0 or pop_r.vacancies() > 0:
        open_pools = [p for p in (pop_d, pop_r) if p.vacancies() > 0]
        if spent >= budget:
            for pop in open_pools:
                fitness = portfolio.fitness_d if pop is pop_d else portfolio.fitness_r
                while pop.vacancies() > 0:
                    counter += 1
                    rec = _clone_elite(pop, fitness, rng,
                                       f"clone-{generation}-{counter}", birth)
                    report = pre_evaluation_filter(rec, kind, config, sandbox)
                    if not report.passed:
                        elite = pop.records[int(np.argmax(fitness)) if len(fitness) else 0]
                        rec = OperatorRecord(
                            id=f"clone-{generation}-{counter}", kind=elite.kind,
                            provenance="generated", description=f"clone of {elite.id}",
                            impl=elite.impl, source=elite.source, birth=birth)
                        report = pre_evaluation_filter(rec, kind, config, sandbox)
                        if not report.passed:
                            raise ReplenishError(
                                f"fallback clone failed the filter: {report.reason}")
                    pop.add(rec)
                    portfolio.append_slot(rec.kind)
                    birth += 1
                    actions.append({"strategy": "fallback-clone", "kind": rec.kind,
                                    "new": rec.id})
            break
        allow_joint = pop_d.vacancies() > 0 and pop_r.vacancies() > 0
        allow_homo = any(len(p.records) >= 2 for p in open_pools)
        strategy = _sample_strategy(config.strategy_weights, rng, allow_homo, allow_joint)
        spent += 1
        counter += 1
        if strategy == "synergistic":
            i, j = select_synergy_pair(portfolio, rng, config.synergy_selection)
            parents = [pop_d.records[i], pop_r.records[j]]
            request = GenerationRequest(action="c2", problem_kind=kind, parents=parents)
            try:
                response = gateway.generate(request, salt=counter)
            except GlnsError:
                continue
            recs = []
            ok = True
            for role, source in response.artifacts:
                rec = record_from_artifact(role, source, response.description,
                                           f"c2-{generation}-{counter}-{role[0]}", birth)
                report = pre_evaluation_filter(rec, kind, config, sandbox)
                if not report.passed:
                    ok = False
                    break
                recs.append(rec)
            if not ok or pop_d.vacancies() < 1 or pop_r.vacancies() < 1:
                continue
            for rec in recs:
                target = pop_d if rec.kind == DESTROY else pop_r
                target.add(rec)
                portfolio.append_slot(rec.kind)
                birth += 1
            actions.append({"strategy": "synergistic", "action": "c2",
                            "parents": [p.id for p in parents],
                            "new": [r.id for r in recs]})
            continue
        pool = open_pools[int(rng.integers(0, len(open_pools)))]
        role = DESTROY if pool is pop_d else REPAIR
        fitness = portfolio.fitness_d if role == DESTROY else portfolio.fitness_r
        if strategy == "homogeneous" and len(pool.records) >= 2:
            parent_a, parent_b = select_homogeneous_parents(pool, fitness, rng)
            action = "c1"
            parents = [parent_a, parent_b]
        else:
            strategy = "mutation"
            idx = _fitness_draw(fitness, rng)
            action = choose_mutation_action(_rank_of(idx, fitness), len(pool.records), rng)
            parents = [pool.records[idx]]
        request = GenerationRequest(action=action, problem_kind=kind,
                                    operator_kind=role, parents=parents)
        try:
            response = gateway.generate(request, salt=counter)
            role_got, source = response.artifacts[0]
            rec = record_from_artifact(role_got, source, response.description,
                                       f"{action}-{generation}-{counter}", birth)
        except GlnsError:
            continue
        report = pre_evaluation_filter(rec, kind, config, sandbox)
        if not report.passed:
            actions.append({"strategy": strategy, "action": action,
                            "rejected": rec.id, "reason": report.reason})
            continue
        pool.add(rec)
        portfolio.append_slot(role)
        birth += 1
        actions.append({"strategy": strategy, "action": action,
                        "parents": [p.id for p in parents], "new": rec.id})
    return actions, birth, counter


# --- the full loop ---------------------------------------------------------------

def run_evolution(kind: str, instances, gateway: CodegenGateway,
                  config: EvolutionConfig, seed: int, sandbox=None,
                  state: EvolutionState | None = None,
                  on_generation=None) -> EvolutionState:
    """Algorithm main loop; resumes from `state` when given."""
    config.validate()
    instances = list(instances)
    if not instances:
        raise ConfigError("training batch must be nonempty")
    if state is None:
        pop_d, pop_r, birth, counter = seed_populations(kind, gateway, config,
                                                        seed, sandbox)
        state = EvolutionState(
            kind=kind, pop_d=pop_d, pop_r=pop_r,
            portfolio=PortfolioState.fresh(len(pop_d.records), len(pop_r.records)),
            generation=0, seed=seed, birth_counter=birth, record_counter=counter)
    pool_d = CompiledPool.compile(state.pop_d.records, sandbox)
    pool_r = CompiledPool.compile(state.pop_r.records, sandbox)
    while state.generation < config.max_generations:
        g = state.generation + 1
        for b, instance in enumerate(instances):
            name = instance.name or f"instance-{b}"
            best = None
            if name in state.best_costs:
                best = (state.best_solutions[name], state.best_costs[name])
            result = run_episode(instance, pool_d, pool_r, state.portfolio,
                                 config.episode, make_rng(seed, _EPISODE_STREAM, g, b),
                                 best=best)
            state.best_costs[name] = result.global_best_cost
            state.best_solutions[name] = result.global_best
        event = {
            "g": g,
            "action_log": [],
            "fitness_d": [float(v) for v in state.portfolio.fitness_d],
            "fitness_r": [float(v) for v in state.portfolio.fitness_r],
            "synergy": [[float(v) for v in row] for row in state.portfolio.synergy],
            "best_cost": state_mean(state),
        }
        if g % config.manage_every == 0:
            i, j = select_synergy_pair(state.portfolio, make_rng(seed, _MANAGE_STREAM, g, 0),
                                       "argmax")
            event["best_pair"] = [state.pop_d.records[i].id, state.pop_r.records[j].id]
            removed_d, removed_r = prune(state.pop_d, state.pop_r, state.portfolio,
                                         config.prune_count)
            event["action_log"].append({"strategy": "prune",
                                        "removed_d": removed_d, "removed_r": removed_r})
            actions, state.birth_counter, state.record_counter = replenish(
                state.pop_d, state.pop_r, state.portfolio, gateway, config, kind,
                make_rng(seed, _MANAGE_STREAM, g, 1), g,
                state.birth_counter, state.record_counter, sandbox)
            event["action_log"].extend(actions)
            reset_metrics(state.portfolio)
            pool_d = CompiledPool.compile(state.pop_d.records, sandbox)
            pool_r = CompiledPool.compile(state.pop_r.records, sandbox)
        state.events.append(event)
        state.generation = g
        if on_generation is not None:
            on_generation(state, event)
    return state


def state_mean(state: EvolutionState) -> float:
    return float(np.mean(list(state.best_costs.values())))


# --- snapshots -------------------------------------------------------------------

def snapshot_to_json(state: EvolutionState) -> dict:
    return {
        "kind": state.kind,
        "generation": state.generation,
        "seed": state.seed,
        "birth_counter": state.birth_counter,
        "record_counter": state.record_counter,
        "capacity": state.pop_d.capacity,
        "records_d": [r.to_json() for r in state.pop_d.records],
        "records_r": [r.to_json() for r in state.pop_r.records],
        "portfolio": {
            "weights_d": list(map(float, state.portfolio.weights_d)),
            "weights_r": list(map(float, state.portfolio.weights_r)),
            "fitness_d": list(map(float, state.portfolio.fitness_d)),
            "fitness_r": list(map(float, state.portfolio.fitness_r)),
            "synergy": [[float(v) for v in row] for row in state.portfolio.synergy],
        },
        "best_costs": dict(state.best_costs),
        "best_solutions": {
            name: (sol.tour if hasattr(sol, "tour") else sol.routes)
            for name, sol in state.best_solutions.items()
        },
    }


def snapshot_from_json(doc: dict) -> EvolutionState:
    from .problems import RouteSolution, TourSolution

    cap = doc.get("capacity", 5)
    pop_d = Population([OperatorRecord.from_json(r) for r in doc["records_d"]], cap)
    pop_r = Population([OperatorRecord.from_json(r) for r in doc["records_r"]], cap)
    pf = doc["portfolio"]
    portfolio = PortfolioState(
        np.asarray(pf["weights_d"], dtype=float), np.asarray(pf["weights_r"], dtype=float),
        np.asarray(pf["fitness_d"], dtype=float), np.asarray(pf["fitness_r"], dtype=float),
        np.asarray(pf["synergy"], dtype=float).reshape(len(pf["fitness_d"]),
                                                       len(pf["fitness_r"])))
    kind = doc["kind"]
    solutions = {}
    for name, body in doc.get("best_solutions", {}).items():
        if kind == TSP:
            solutions[name] = TourSolution(list(body))
        else:
            solutions[name] = RouteSolution([list(r) for r in body])
    return EvolutionState(kind=kind, pop_d=pop_d, pop_r=pop_r, portfolio=portfolio,
                          generation=doc["generation"], seed=doc["seed"],
                          best_costs=dict(doc.get("best_costs", {})),
                          best_solutions=solutions, events=[],
                          birth_counter=doc.get("birth_counter", 0),
                          record_counter=doc.get("record_counter", 0))


def save_snapshot(state: EvolutionState, path):
    Path(path).write_text(json.dumps(snapshot_to_json(state), indent=2) + "\n")


def load_snapshot(path) -> EvolutionState:
    return snapshot_from_json(json.loads(Path(path).read_text()))
