import zlib

import numpy as np
import pytest

from glns.errors import OperatorError
from glns.instances import GeneratorConfig, generate
from glns.operators import (BUILTINS, DISCOVERED_PAIR, builtin_names_for,
                            builtin_record, destroy_count)
from glns.operators.base import DESTROY, REPAIR, make_callable
from glns.operators.classic import (greedy_insertion, random_removal,
                                    regret_k_insertion, related_removal,
                                    worst_removal)
from glns.operators.discovered import (_circular_window_scores, acagi_repair,
                                       acsr_destroy, dapi_repair, pswr_destroy)
from glns.problems import (CVRP, OVRP, TSP, Instance, RouteSolution, TourSolution,
                           check_feasible, solution_cost, tsp_cost)
from glns.rand import make_rng


class StubRng:
    """Scripted generator for branch forcing; falls back to a real stream."""

    def __init__(self, randoms=(), integers=(), shuffle=False):
        self.randoms = list(randoms)
        self.ints = list(integers)
        self.do_shuffle = shuffle
        self._fallback = make_rng(0)

    def random(self, *a, **k):
        return self.randoms.pop(0) if self.randoms else self._fallback.random(*a, **k)

    def integers(self, *a, **k):
        return self.ints.pop(0) if self.ints else self._fallback.integers(*a, **k)

    def choice(self, *a, **k):
        return self._fallback.choice(*a, **k)

    def uniform(self, *a, **k):
        return self._fallback.uniform(*a, **k)

    def shuffle(self, x):
        if self.do_shuffle:
            self._fallback.shuffle(x)

    def permutation(self, *a, **k):
        return self._fallback.permutation(*a, **k)


def tsp_instance(n=10, seed=3):
    return generate(GeneratorConfig(TSP, n, seed=seed))


def vrp_instance(n=8, seed=3, kind=CVRP):
    return generate(GeneratorConfig(kind, n, seed=seed))


def identity_tour(n):
    return TourSolution(list(range(n)))


# --- destroy_count -----------------------------------------------------------

def test_destroy_count_paper_setting():
    assert destroy_count(50, 0.2) == 10


def test_destroy_count_plain():
    assert destroy_count(10, 0.2) == 2


def test_destroy_count_lower_clamp():
    assert destroy_count(3, 0.2) == 1


def test_destroy_count_upper_clamp_and_validation():
    assert destroy_count(2, 0.9) == 1
    with pytest.raises(OperatorError):
        destroy_count(10, 0.0)


# --- classic removals -----------------------------------------------------------

def test_random_removal_cardinality():
    inst = tsp_instance(5)
    out = random_removal(identity_tour(5), 2, inst, make_rng(1))
    assert len(out.removed) == 2
    assert len(out.partial.tour) == 3
    assert sorted(out.removed + out.partial.tour) == list(range(5))


def test_random_removal_max_count():
    inst = tsp_instance(6)
    out = random_removal(identity_tour(6), 5, inst, make_rng(2))
    assert len(out.partial.tour) == 1


def test_random_removal_uniformity():
    inst = tsp_instance(6)
    counts = np.zeros(6)
    rng = make_rng(42)
    trials = 10_000
    for _ in range(trials):
        out = random_removal(identity_tour(6), 2, inst, rng)
        for v in out.removed:
            counts[v] += 1
    freqs = counts / trials
    assert np.all(np.abs(freqs - 2 / 6) <= 0.02)


def test_random_removal_rejects_full_removal():
    with pytest.raises(OperatorError):
        random_removal(identity_tour(4), 4, tsp_instance(4), make_rng(0))


def test_worst_removal_outlier_first():
    coords = [(0, 0), (1, 0), (2, 0), (3, 0), (2, 8)]
    inst = Instance.from_coords(TSP, coords)
    out = worst_removal(TourSolution([0, 1, 2, 3, 4]), 1, inst)
    assert out.removed == [4]


def test_worst_removal_matches_brute_force_saving():
    inst = tsp_instance(8, seed=11)
    tour = identity_tour(8)
    sav = []
    for i in range(8):
        prev, nxt = (i - 1) % 8, (i + 1) % 8
        sav.append(inst.dist[prev, i] + inst.dist[i, nxt] - inst.dist[prev, nxt])
    expected_first = int(np.argmax(sav))
    out = worst_removal(tour, 1, inst)
    assert out.removed == [expected_first]


def test_worst_removal_tie_breaks_low_index():
    # regular polygon: all savings equal
    angles = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    coords = np.c_[np.cos(angles), np.sin(angles)]
    inst = Instance.from_coords(TSP, coords)
    out = worst_removal(TourSolution(list(range(6))), 2, inst)
    assert out.removed == [0, 1]


def test_worst_removal_rejects_zero_count():
    with pytest.raises(OperatorError):
        worst_removal(identity_tour(5), 0, tsp_instance(5))


def test_worst_removal_routes():
    inst = vrp_instance(6, seed=8)
    sol = RouteSolution([[1, 2, 3], [4, 5, 6]])
    out = worst_removal(sol, 2, inst)
    assert len(out.removed) == 2
    assert check_feasible(inst, RouteSolution(out.partial.routes + [out.removed])).ok


def test_related_removal_cluster():
    # two tight clusters far apart; seed in cluster A takes all of cluster A
    coords = [(0, 0), (0.01, 0), (0, 0.01), (5, 5), (5.01, 5), (5, 5.01)]
    inst = Instance.from_coords(TSP, coords)
    rng = StubRng(integers=[0])          # seed element index 0 -> node 0
    out = related_removal(TourSolution(list(range(6))), 3, inst, rng)
    assert sorted(out.removed) == [0, 1, 2]


def test_related_removal_single():
    inst = tsp_instance(5)
    out = related_removal(identity_tour(5), 1, inst, StubRng(integers=[3]))
    assert out.removed == [3]


def test_related_removal_leaves_one():
    inst = tsp_instance(4)
    out = related_removal(identity_tour(4), 3, inst, make_rng(5))
    assert len(out.partial.tour) == 1


# --- insertions -----------------------------------------------------------------

def test_greedy_insertion_collinear_zero_delta():
    inst = Instance.from_coords(TSP, [(0, 0), (2, 0), (1, 0)])
    partial = TourSolution([0, 1])
    result = greedy_insertion(partial, [2], inst)
    assert tsp_cost(inst, result) == pytest.approx(4.0)


def test_greedy_insertion_empty_removed_is_identity():
    inst = tsp_instance(5)
    partial = TourSolution([3, 1, 4])
    result = greedy_insertion(partial, [], inst)
    assert result.tour == [3, 1, 4]
    assert result is not partial


def test_greedy_insertion_matches_position_enumeration():
    inst = tsp_instance(5, seed=6)
    partial = TourSolution([0, 2, 4])
    removed = [1, 3]
    result = greedy_insertion(partial, removed, inst)

    tour = [0, 2, 4]
    for node in removed:
        best = None
        for i in range(len(tour)):
            prev, cur = tour[i - 1], tour[i]
            delta = inst.dist[prev, node] + inst.dist[node, cur] - inst.dist[prev, cur]
            if best is None or delta < best[0]:
                best = (delta, i)
        tour.insert(best[1], node)
    assert result.tour == tour


def test_greedy_insertion_vrp_opens_route_only_when_needed():
    inst = Instance.from_coords(CVRP, [(0, 0), (1, 0), (0, 1), (1, 1)],
                                demands=[0, 5, 5, 5], capacity=10, depot=0)
    result = greedy_insertion(RouteSolution([[1, 2]]), [3], inst)
    assert check_feasible(inst, result).ok
    assert len(result.routes) == 2          # 1+2 fill a vehicle; 3 opens a new one


def test_regret_single_element_equals_greedy():
    inst = tsp_instance(7, seed=9)
    partial = TourSolution([0, 2, 4, 6])
    a = greedy_insertion(partial, [3], inst)
    b = regret_k_insertion(partial, [3], inst, k=2)
    assert a.tour == b.tour


def test_regret_two_elements_matches_oracle():
    inst = tsp_instance(6, seed=14)
    partial = TourSolution([0, 1, 2, 3])
    removed = [4, 5]

    def costs_for(tour, node):
        return sorted(
            (inst.dist[tour[i - 1], node] + inst.dist[node, tour[i]]
             - inst.dist[tour[i - 1], tour[i]], i)
            for i in range(len(tour)))

    tour = [0, 1, 2, 3]
    pending = [4, 5]
    while pending:
        scored = []
        for node in pending:
            opts = costs_for(tour, node)
            kth = opts[min(2, len(opts)) - 1]
            scored.append((-(kth[0] - opts[0][0]), node, opts[0][1]))
        scored.sort()
        _, node, pos = scored[0]
        tour.insert(pos, node)
        pending.remove(node)
    got = regret_k_insertion(partial, removed, inst, k=2)
    assert got.tour == tour


def test_regret_empty_identity_and_validation():
    inst = tsp_instance(5)
    assert regret_k_insertion(TourSolution([0, 1]), [], inst, k=2).tour == [0, 1]
    with pytest.raises(OperatorError):
        regret_k_insertion(TourSolution([0, 1]), [2], inst, k=1)


# --- discovered: tours ----------------------------------------------------------

def test_acsr_moderate_greedy_picks_max_window():
    inst = tsp_instance(10, seed=20)
    tour = identity_tour(10)
    scores = _circular_window_scores(tour.tour, inst.dist, 2)
    expected_start = int(np.argmax(scores))
    expected = [tour.tour[expected_start], tour.tour[(expected_start + 1) % 10]]
    out = acsr_destroy(tour, 2, inst, StubRng(randoms=[0.0]))   # force greedy branch
    assert out.removed == expected


def test_acsr_window_score_oracle():
    inst = tsp_instance(10, seed=21)
    tour = list(make_rng(1).permutation(10))
    scores = _circular_window_scores(tour, inst.dist, 3)
    for s in range(10):
        window = [tour[(s + i) % 10] for i in range(3)]
        internal = sum(inst.dist[window[i], window[i + 1]] for i in range(2))
        before = inst.dist[tour[(s - 1) % 10], window[0]]
        after = inst.dist[window[-1], tour[(s + 3) % 10]]
        assert scores[s] == pytest.approx(internal + before + after, abs=1e-12)


def test_acsr_aggressive_cardinality():
    inst = tsp_instance(10, seed=22)
    out = acsr_destroy(identity_tour(10), 5, inst, make_rng(3))
    assert len(out.removed) == 5
    assert sorted(out.removed + out.partial.tour) == list(range(10))


def test_acsr_threshold_boundary():
    inst = tsp_instance(10, seed=23)
    # cnt=4 == 0.4*10: moderate branch -> contiguous circular window
    out = acsr_destroy(identity_tour(10), 4, inst, StubRng(randoms=[0.0]))
    positions = sorted(out.removed)
    diffs = {(positions[i + 1] - positions[i]) for i in range(3)}
    circular = positions == [0, 1, 8, 9] or positions == [0, 1, 2, 9] or positions == [0, 7, 8, 9]
    assert diffs == {1} or circular


def test_acsr_rejects_remove_all():
    with pytest.raises(OperatorError):
        acsr_destroy(identity_tour(5), 5, tsp_instance(5), make_rng(0))


def test_dapi_diversity_formulas():
    from glns.operators.discovered import _tour_diversity

    inst = Instance.from_coords(TSP, [(0, 0), (1, 0)])
    diversity = _tour_diversity([0, 1], inst.dist)
    assert diversity == 1.0
    threshold = 0.1 + 0.4 * (1 - diversity)
    temperature = 3.0 - 2.0 * diversity
    assert threshold == pytest.approx(0.1)
    assert temperature == pytest.approx(1.0)


def test_dapi_empty_removed_identity():
    inst = tsp_instance(6)
    partial = TourSolution([0, 5, 3])
    assert dapi_repair(partial, [], inst, make_rng(0)).tour == [0, 5, 3]


def test_dapi_greedy_branch_matches_greedy_insertion():
    inst = tsp_instance(8, seed=30)
    partial = TourSolution([0, 1, 2, 3, 4, 5, 6])
    # no shuffle; u1 >= threshold, u2 >= softmax -> argmin; then no 2-opt
    rng = StubRng(randoms=[0.99, 0.99, 0.99])
    got = dapi_repair(partial, [7], inst, rng)
    want = greedy_insertion(partial, [7], inst)
    assert tsp_cost(inst, got) == pytest.approx(tsp_cost(inst, want), abs=1e-12)


def test_dapi_tiny_partial_appends():
    inst = tsp_instance(4)
    got = dapi_repair(TourSolution([2]), [0, 1, 3], inst, make_rng(1))
    assert got.tour[0] == 2
    assert sorted(got.tour) == [0, 1, 2, 3]


# --- discovered: routes ----------------------------------------------------------

def test_pswr_first_pick_is_uniform_random():
    inst = vrp_instance(6, seed=40)
    sol = RouteSolution([[1, 2, 3], [4, 5, 6]])
    # greedy gate draws u < ratio; ratio starts 0 so first pick must consume
    # the uniform path even when u = 0
    out = pswr_destroy(sol, 1, inst, StubRng(randoms=[0.0], integers=[2]))
    assert out.removed == [3]


def test_pswr_forced_greedy_takes_top3_saving():
    inst = vrp_instance(6, seed=41)
    sol = RouteSolution([[1, 2, 3], [4, 5, 6]])
    rng = StubRng(randoms=[0.9, 0.0, 0.0], integers=[0, 0])
    # first step: uniform (ratio 0, u=0.9 -> random path picks index 0)
    # second step: ratio 0.5, u=0.0 -> greedy; integers pick top-1
    out = pswr_destroy(sol, 2, inst, rng)
    first = out.removed[0]
    work = [[c for c in r if c != first] for r in sol.routes]
    pairs = []
    for route in work:
        for i, c in enumerate(route):
            prev = route[i - 1] if i > 0 else 0
            nxt = route[i + 1] if i < len(route) - 1 else 0
            pairs.append((-(inst.dist[prev, c] + inst.dist[c, nxt]
                            - inst.dist[prev, nxt]), c))
    pairs.sort()
    assert out.removed[1] in [c for _, c in pairs[:3]]


def test_pswr_single_removal_keeps_feasibility():
    inst = vrp_instance(8, seed=42)
    from glns.engine import random_solution
    sol = random_solution(inst, make_rng(7))
    out = pswr_destroy(sol, 1, inst, make_rng(8))
    assert len(out.removed) == 1
    assert check_feasible(
        inst, RouteSolution(out.partial.routes + [out.removed])).ok


def test_pswr_remove_all_guard():
    inst = vrp_instance(4, seed=43)
    sol = RouteSolution([[1, 2], [3, 4]])
    out = pswr_destroy(sol, 4, inst, make_rng(1))
    assert sorted(out.removed) == [1, 2, 3, 4]
    assert out.partial.routes == []


def test_acagi_greedy_branch_minimum_delta():
    inst = Instance.from_coords(CVRP, [(0, 0), (1, 0), (2, 0), (3, 0)],
                                demands=[0, 2, 2, 2], capacity=50, depot=0)
    partial = RouteSolution([[1, 2]])
    rng = StubRng(randoms=[0.9, 0.9, 0.0])   # no exploration noise, pick best regret
    got = acagi_repair(partial, [3], inst, rng, consolidate=False)
    want = greedy_insertion(partial, [3], inst)
    assert solution_cost(inst, got) == pytest.approx(solution_cost(inst, want))


def test_acagi_empty_removed_identity_without_consolidation():
    inst = vrp_instance(6, seed=50)
    partial = RouteSolution([[1, 2], [3], [4, 5, 6]])
    got = acagi_repair(partial, [], inst, make_rng(0), consolidate=False)
    assert got.routes == partial.routes
    merged = acagi_repair(partial, [], inst, make_rng(0), consolidate=True)
    assert check_feasible(inst, merged).ok


def test_acagi_always_feasible_property():
    for seed in range(40):
        inst = vrp_instance(8, seed=1000 + seed)
        from glns.engine import random_solution
        rng = make_rng(seed)
        sol = random_solution(inst, rng)
        out = pswr_destroy(sol, 3, inst, rng)
        got = acagi_repair(out.partial, out.removed, inst, rng)
        assert check_feasible(inst, got).ok, f"seed {seed}"


# --- cross-cutting contracts -------------------------------------------------------

@pytest.mark.parametrize("kind", [TSP, CVRP, OVRP])
def test_all_pairs_conserve_and_repair(kind):
    from glns.engine import random_solution

    inst = generate(GeneratorConfig(kind, 12, seed=5))
    destroys = builtin_names_for(kind, DESTROY)
    repairs = builtin_names_for(kind, REPAIR)
    for d_name in destroys:
        for r_name in repairs:
            d = make_callable(builtin_record(d_name))
            r = make_callable(builtin_record(r_name))
            for trial in range(25):
                rng = make_rng(trial, zlib.crc32(f"{d_name}/{r_name}".encode()))
                sol = random_solution(inst, rng)
                elements = sol.tour if kind == TSP else sol.customers()
                out = d(sol, 3, inst, rng)
                assert sorted(out.removed + (
                    out.partial.tour if kind == TSP else out.partial.customers())) \
                    == sorted(elements), (d_name, trial)
                fixed = r(out.partial, out.removed, inst, rng)
                assert check_feasible(inst, fixed).ok, (d_name, r_name, trial)


def test_greedy_insertion_is_deterministic():
    inst = vrp_instance(10, seed=60)
    from glns.engine import random_solution
    sol = random_solution(inst, make_rng(3))
    out = random_removal(sol, 3, inst, make_rng(4))
    a = greedy_insertion(out.partial, out.removed, inst)
    b = greedy_insertion(out.partial, out.removed, inst)
    assert a.routes == b.routes


def test_registry_covers_all_builtins():
    assert set(DISCOVERED_PAIR[TSP]) <= set(BUILTINS)
    for name, spec in BUILTINS.items():
        fn = spec.make({})
        assert callable(fn), name
