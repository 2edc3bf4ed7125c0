import json

import numpy as np
import pytest

from glns.codegen import BackendConfig, CodegenGateway
from glns.engine import EpisodeConfig, PortfolioState
from glns.errors import ConfigError, SelectionError
from glns.evolution import (EvolutionConfig, Population, choose_mutation_action,
                            pre_evaluation_filter, prune, prune_order,
                            record_from_artifact, replenish, reset_metrics,
                            run_evolution, save_snapshot, load_snapshot,
                            seed_populations, select_homogeneous_parents,
                            select_synergy_pair, snapshot_to_json)
from glns.instances import GeneratorConfig, generate
from glns.operators import SEED_DESTROY, SEED_REPAIR, builtin_record
from glns.operators.base import BuiltinImpl, OperatorRecord, SourceImpl
from glns.rand import make_rng


def small_config(**kw):
    defaults = dict(max_generations=4, capacity=3, prune_count=1, manage_every=2,
                    episode=EpisodeConfig(iterations=15),
                    filter_size=8, filter_budget=2.0, backend_attempts=4)
    defaults.update(kw)
    return EvolutionConfig(**defaults)


def mock_gateway(seed=0):
    return CodegenGateway(BackendConfig(mode="mock", mock_seed=seed))


def make_pop(n, kind="destroy", capacity=None, fitness_offset=0):
    recs = [builtin_record("random_removal" if kind == "destroy" else "greedy_insertion",
                           rec_id=f"{kind}-{i}", birth=i + fitness_offset)
            for i in range(n)]
    return Population(recs, capacity=capacity or n)


# --- seeding -----------------------------------------------------------------

def test_seed_populations_contains_expert_seeds():
    config = small_config(capacity=5)
    pop_d, pop_r, birth, counter = seed_populations("tsp", mock_gateway(), config, seed=3)
    assert set(SEED_DESTROY) <= set(pop_d.ids())
    assert set(SEED_REPAIR) <= set(pop_r.ids())
    assert len(pop_d.records) == 5 and len(pop_r.records) == 5
    generated_d = [r for r in pop_d.records if r.provenance == "generated"]
    generated_r = [r for r in pop_r.records if r.provenance == "generated"]
    assert len(generated_d) == 3 and len(generated_r) == 4
    assert all(r.source for r in generated_d + generated_r)


def test_seed_populations_no_fill_needed_at_capacity_two():
    config = small_config(capacity=2)
    gateway = mock_gateway()
    pop_d, pop_r, _, _ = seed_populations("tsp", gateway, config, seed=1)
    assert pop_d.ids() == list(SEED_DESTROY)
    # destroy pool needed no backend call; repair pool needed exactly one
    assert all(t.action == "i2" for t in gateway.transcript)


def test_seeding_filters_crashing_candidates(monkeypatch):
    pytest.importorskip("glns_sandbox")
    from glns.sandbox_client import SandboxSession

    config = small_config(capacity=3, backend_attempts=3)
    gateway = mock_gateway()
    bad = "{boom}\n```python\ndef destroy(a, b, c):\n    raise ValueError('x')\n```"
    calls = {"n": 0}
    real = type(gateway).generate

    def flaky(self, request, salt=None):
        calls["n"] += 1
        if calls["n"] == 1:
            from glns.codegen import parse_response
            return parse_response(bad, request.action, request.operator_kind)
        return real(self, request, salt=salt)

    monkeypatch.setattr(type(gateway), "generate", flaky)
    with SandboxSession() as sandbox:
        pop_d, pop_r, _, _ = seed_populations("tsp", gateway, config, seed=2,
                                              sandbox=sandbox)
    assert len(pop_d.records) == 3
    assert calls["n"] > 1          # regeneration happened after the filter reject


# --- pruning -----------------------------------------------------------------

def test_prune_order_by_fitness():
    assert prune_order([5, 1, 4, 2, 3], [0, 1, 2, 3, 4], 2) == [1, 3]


def test_prune_order_ties_remove_youngest():
    assert prune_order([1, 1, 1, 1], [3, 9, 1, 5], 2) == [1, 3]


def test_prune_reindexes_portfolio():
    pop_d = make_pop(4, "destroy")
    pop_r = make_pop(3, "repair")
    portfolio = PortfolioState.fresh(4, 3)
    rng = make_rng(0)
    for _ in range(60):
        i, j = int(rng.integers(0, 4)), int(rng.integers(0, 3))
        portfolio.fitness_d[i] += 1
        portfolio.fitness_r[j] += 1
        portfolio.synergy[i, j] += 1
    before = portfolio.synergy.copy()
    before_fd = portfolio.fitness_d.copy()
    before_fr = portfolio.fitness_r.copy()
    drop_d = prune_order(portfolio.fitness_d, [r.birth for r in pop_d.records], 1)
    drop_r = prune_order(portfolio.fitness_r, [r.birth for r in pop_r.records], 1)
    keep_d = [i for i in range(4) if i not in drop_d]
    keep_r = [j for j in range(3) if j not in drop_r]
    removed_d, removed_r = prune(pop_d, pop_r, portfolio, 1)
    assert len(removed_d) == 1 and len(removed_r) == 1
    assert portfolio.synergy.shape == (3, 2)
    assert np.allclose(portfolio.synergy, before[np.ix_(keep_d, keep_r)])
    # survivors keep their full accumulated fitness (pairings with pruned
    # partners included); only rows/columns of the synergy matrix are dropped
    assert np.allclose(portfolio.fitness_d, before_fd[keep_d])
    assert np.allclose(portfolio.fitness_r, before_fr[keep_r])


def test_prune_never_removes_more_than_m():
    pop_d = make_pop(5, "destroy")
    pop_r = make_pop(5, "repair")
    portfolio = PortfolioState.fresh(5, 5)       # all-zero fitness = full tie
    prune(pop_d, pop_r, portfolio, 2)
    assert len(pop_d.records) == 3 and len(pop_r.records) == 3


# --- action selection -----------------------------------------------------------

def test_mutation_action_rank_rules():
    rng = make_rng(0)
    assert choose_mutation_action(0, 3, rng) == "m2"
    assert choose_mutation_action(2, 3, rng) == "m1"


def test_mutation_action_middle_is_fair_coin():
    rng = make_rng(1)
    picks = [choose_mutation_action(1, 3, rng) for _ in range(10_000)]
    frac = picks.count("m1") / len(picks)
    assert abs(frac - 0.5) <= 0.02


def test_homogeneous_parents_two_records():
    pop = make_pop(2, "destroy")
    a, b = select_homogeneous_parents(pop, [1.0, 0.0], make_rng(2))
    assert {a.id, b.id} == {"destroy-0", "destroy-1"}
    with pytest.raises(SelectionError):
        select_homogeneous_parents(make_pop(1), [1.0], make_rng(0))


def test_homogeneous_parent_frequency():
    pop = make_pop(3, "destroy")
    fitness = [3.0, 1.0, 0.0]
    rng = make_rng(3)
    n = 100_000
    first_counts = np.zeros(3)
    for _ in range(n):
        first = select_homogeneous_parents(pop, fitness, rng)[0]
        first_counts[int(first.id.split("-")[1])] += 1
    floor = 0.01 * np.mean(fitness) + 1e-9
    probs = (np.array(fitness) + floor) / (sum(fitness) + 3 * floor)
    for k in range(3):
        sd = np.sqrt(probs[k] * (1 - probs[k]) / n)
        assert abs(first_counts[k] / n - probs[k]) <= 3 * sd + 1e-3


def test_homogeneous_zero_fitness_uniform():
    pop = make_pop(3, "destroy")
    rng = make_rng(4)
    counts = np.zeros(3)
    for _ in range(30_000):
        first = select_homogeneous_parents(pop, [0.0, 0.0, 0.0], rng)[0]
        counts[int(first.id.split("-")[1])] += 1
    assert np.all(np.abs(counts / 30_000 - 1 / 3) < 0.02)


def test_synergy_pair_argmax_and_ties():
    portfolio = PortfolioState.fresh(3, 4)
    portfolio.synergy[1, 3] = 2.0
    assert select_synergy_pair(portfolio, make_rng(0)) == (1, 3)
    portfolio.synergy[0, 1] = 2.0          # tie -> lowest (i, j)
    assert select_synergy_pair(portfolio, make_rng(0)) == (0, 1)


def test_synergy_pair_fallback_on_zero_matrix():
    portfolio = PortfolioState.fresh(2, 2)
    portfolio.fitness_d[:] = [2.0, 1.0]
    portfolio.fitness_r[:] = [0.0, 5.0]
    assert select_synergy_pair(portfolio, make_rng(0)) == (0, 1)


def test_synergy_pair_matches_scan_oracle():
    rng = make_rng(5)
    portfolio = PortfolioState.fresh(4, 4)
    portfolio.synergy[:] = rng.random((4, 4))
    i, j = select_synergy_pair(portfolio, make_rng(0))
    flat_best = max((portfolio.synergy[a, b], -a, -b)
                    for a in range(4) for b in range(4))
    assert portfolio.synergy[i, j] == flat_best[0]


def test_synergy_roulette_mode_prefers_large_entries():
    portfolio = PortfolioState.fresh(2, 2)
    portfolio.synergy[:] = [[8.0, 1.0], [0.5, 0.5]]
    rng = make_rng(6)
    hits = sum(select_synergy_pair(portfolio, rng, mode="roulette") == (0, 0)
               for _ in range(5000))
    assert abs(hits / 5000 - 0.8) < 0.03


# --- filter -----------------------------------------------------------------

def test_filter_passes_builtin():
    report = pre_evaluation_filter(builtin_record("greedy_insertion"), "tsp",
                                   small_config())
    assert report.passed


def test_filter_rejects_duplicate_node_output():
    source = ("def destroy(current_solution, destroy_cnt, problem_data):\n"
              "    sol = list(current_solution)\n"
              "    removed = [sol[0]] * destroy_cnt\n"
              "    return removed, sol[1:]\n")
    rec = record_from_artifact("destroy", source, "dup", "bad-1", 0)
    assert isinstance(rec.impl, SourceImpl)
    # run it in process through a tiny adapter to avoid needing the sandbox
    from glns.operators.base import DestroyOutcome
    from glns.problems import TourSolution

    def fake(sol, cnt, instance, rng):
        removed, partial = (lambda s, c, d: ([s.tour[0]] * c, s.tour[1:]))(sol, cnt, None)
        return DestroyOutcome(removed, TourSolution(partial))

    rec2 = OperatorRecord("bad-2", "destroy", "builtin", "dup",
                          BuiltinImpl("random_removal"))
    import glns.evolution as evo
    original = evo.make_callable
    try:
        evo.make_callable = lambda record, sandbox=None: fake
        report = pre_evaluation_filter(rec2, "tsp", small_config())
    finally:
        evo.make_callable = original
    assert not report.passed
    assert "cover" in report.reason or "removed" in report.reason


def test_filter_rejects_slow_operator():
    import time as _time

    def sleepy(sol, cnt, instance, rng):
        _time.sleep(0.15)
        from glns.operators.classic import random_removal
        return random_removal(sol, cnt, instance, rng)

    rec = OperatorRecord("slow", "destroy", "builtin", "slow",
                         BuiltinImpl("random_removal"))
    import glns.evolution as evo
    original = evo.make_callable
    try:
        evo.make_callable = lambda record, sandbox=None: sleepy
        report = pre_evaluation_filter(rec, "tsp", small_config(filter_budget=0.05))
    finally:
        evo.make_callable = original
    assert not report.passed
    assert "timeout" in report.reason


# --- replenish / reset -----------------------------------------------------------

def _management_state(capacity=5, prune_count=2):
    config = small_config(capacity=capacity, prune_count=prune_count,
                          backend_attempts=6)
    gateway = mock_gateway(seed=4)
    pop_d, pop_r, birth, counter = seed_populations("tsp", gateway, config, seed=9)
    portfolio = PortfolioState.fresh(capacity, capacity)
    rng = make_rng(10)
    for _ in range(100):
        i, j = int(rng.integers(0, capacity)), int(rng.integers(0, capacity))
        from glns.engine import apply_reward
        apply_reward(portfolio, i, j, float(rng.choice([1.5, 1.2, 0.8, 0.1])), 0.5)
    return config, gateway, pop_d, pop_r, portfolio


def test_replenish_fills_both_pools():
    config, gateway, pop_d, pop_r, portfolio = _management_state()
    prune(pop_d, pop_r, portfolio, 2)
    actions, birth, counter = replenish(pop_d, pop_r, portfolio, gateway, config,
                                        "tsp", make_rng(11), 1, 100, 0)
    assert len(pop_d.records) == 5 and len(pop_r.records) == 5
    assert len(set(pop_d.ids())) == 5 and len(set(pop_r.ids())) == 5
    admitted = [a for a in actions if "new" in a]
    assert sum(2 if isinstance(a["new"], list) else 1 for a in admitted) == 4
    assert portfolio.synergy.shape == (5, 5)


def test_replenish_mutation_only_yields_parameter_variants():
    config, gateway, pop_d, pop_r, portfolio = _management_state()
    config.strategy_weights = (1.0, 0.0, 0.0)
    prune(pop_d, pop_r, portfolio, 2)
    actions, *_ = replenish(pop_d, pop_r, portfolio, gateway, config,
                            "tsp", make_rng(12), 1, 100, 0)
    new_ids = [a["new"] for a in actions if "new" in a]
    assert all(isinstance(x, str) for x in new_ids)
    for rec in pop_d.records + pop_r.records:
        if rec.id in new_ids:
            assert isinstance(rec.impl, BuiltinImpl)


def test_replenish_joint_requires_room_in_both_pools():
    config, gateway, pop_d, pop_r, portfolio = _management_state()
    config.strategy_weights = (0.0, 0.0, 1.0)
    # open one repair slot only
    drop = pop_r.records.pop()
    portfolio.drop([], [len(pop_r.records)])
    assert pop_d.vacancies() == 0 and pop_r.vacancies() == 1
    actions, *_ = replenish(pop_d, pop_r, portfolio, gateway, config,
                            "tsp", make_rng(13), 1, 200, 0)
    assert pop_r.vacancies() == 0
    # no joint admission is possible with a single-sided vacancy
    assert all(a["strategy"] != "synergistic" or "new" not in a for a in actions)


def test_reset_metrics_zeroes_but_keeps_weights():
    portfolio = PortfolioState.fresh(3, 3)
    portfolio.weights_d[:] = [0.3, 1.2, 0.7]
    portfolio.fitness_d[:] = [1, 2, 3]
    portfolio.synergy[0, 1] = 4.0
    before = portfolio.weights_d.copy()
    reset_metrics(portfolio)
    assert portfolio.fitness_d.sum() == 0
    assert portfolio.fitness_r.sum() == 0
    assert portfolio.synergy.sum() == 0
    assert np.array_equal(portfolio.weights_d, before)
    assert portfolio.marginals_consistent()


# --- the loop -----------------------------------------------------------------

def test_run_evolution_minimal_loop():
    config = small_config(max_generations=1, manage_every=1, capacity=3,
                          prune_count=1)
    instances = [generate(GeneratorConfig("tsp", 10, seed=2))]
    state = run_evolution("tsp", instances, mock_gateway(), config, seed=5)
    assert state.generation == 1
    assert len(state.events) == 1
    assert "best_pair" in state.events[0]
    assert len(state.pop_d.records) == 3


def test_run_evolution_counts_management_phases():
    config = small_config(max_generations=6, manage_every=3, capacity=3,
                          prune_count=1)
    instances = [generate(GeneratorConfig("tsp", 10, seed=3))]
    state = run_evolution("tsp", instances, mock_gateway(), config, seed=6)
    managed = [e for e in state.events if e["action_log"]]
    assert len(managed) == 2
    assert state.generation == 6


def test_run_evolution_replay_is_identical():
    config = small_config(max_generations=4, manage_every=2, capacity=3,
                          prune_count=1)
    instances = [generate(GeneratorConfig("tsp", 10, seed=s)) for s in (7, 8)]
    events = []
    for _ in range(2):
        state = run_evolution("tsp", instances, mock_gateway(seed=2), config, seed=9)
        events.append(json.dumps(state.events))
    assert events[0] == events[1]


def test_run_evolution_best_score_nonincreasing():
    config = small_config(max_generations=6, manage_every=3, capacity=3,
                          prune_count=1)
    instances = [generate(GeneratorConfig("cvrp", 8, seed=s)) for s in (1, 2)]
    state = run_evolution("cvrp", instances, mock_gateway(), config, seed=10)
    scores = [e["best_cost"] for e in state.events]
    assert all(b <= a + 1e-12 for a, b in zip(scores, scores[1:]))


def test_snapshot_roundtrip_and_resume():
    config = small_config(max_generations=2, manage_every=2, capacity=3,
                          prune_count=1)
    instances = [generate(GeneratorConfig("tsp", 10, seed=4))]
    state = run_evolution("tsp", instances, mock_gateway(seed=3), config, seed=11)
    doc = snapshot_to_json(state)
    import json as _json
    restored = __import__("glns.evolution", fromlist=["snapshot_from_json"]) \
        .snapshot_from_json(_json.loads(_json.dumps(doc)))
    assert restored.generation == 2
    assert restored.pop_d.ids() == state.pop_d.ids()
    config2 = small_config(max_generations=4, manage_every=2, capacity=3,
                           prune_count=1)
    resumed = run_evolution("tsp", instances, mock_gateway(seed=3), config2,
                            seed=11, state=restored)
    assert resumed.generation == 4


def test_population_rejects_duplicates_and_overflow():
    with pytest.raises(ConfigError):
        Population([builtin_record("random_removal"),
                    builtin_record("random_removal")], capacity=5)
    pop = make_pop(2, "destroy", capacity=2)
    with pytest.raises(ConfigError):
        pop.add(builtin_record("worst_removal", rec_id="x"))
