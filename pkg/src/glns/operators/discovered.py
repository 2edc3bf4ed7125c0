"""The four state-adaptive operators shipped as builtins.

Two work on tours (segment-scoring removal, diversity-driven insertion) and
two on route sets (progressively greedier removal, context-aware insertion
with cached loads). Magic constants are kept as documented defaults in the
parameter maps so calibration can move them.
"""

from __future__ import annotations

import numpy as np

from ..errors import OperatorError
from ..problems import Instance, RouteSolution, TourSolution
from .base import DestroyOutcome, check_removal_count


def _require_tour(sol):
    if not isinstance(sol, TourSolution):
        raise OperatorError("this operator only accepts tour solutions")


def _require_routes(sol):
    if not isinstance(sol, RouteSolution):
        raise OperatorError("this operator only accepts route solutions")


def _circular_window_scores(tour, dist, cnt) -> np.ndarray:
    """Score of the length-`cnt` window starting at each position.

    A window's score is its internal edge length plus both boundary edges,
    i.e. the sum of cnt+1 consecutive edge lengths starting one edge before
    the window (all indices circular).
    """
    t = np.asarray(tour)
    n = len(t)
    edges = dist[t, np.roll(t, -1)]
    doubled = np.concatenate([edges, edges])
    csum = np.concatenate([[0.0], np.cumsum(doubled)])
    width = cnt + 1
    starts = (np.arange(n) - 1) % n
    return csum[starts + width] - csum[starts]


def acsr_destroy(sol, cnt, instance: Instance, rng,
                 greedy_prob: float = 0.7, moderate_frac: float = 0.4,
                 seg_frac: float = 0.3) -> DestroyOutcome:
    """Segment removal that switches regime with the destruction magnitude.

    Moderate counts (cnt <= moderate_frac*n) remove one contiguous circular
    window, picking the highest-scoring one with probability greedy_prob and
    sampling proportionally to scores otherwise. Larger counts fragment the
    tour with several short random segments, topped up by random removal.
    """
    _require_tour(sol)
    tour = list(sol.tour)
    n = len(tour)
    check_removal_count(n, cnt)
    if cnt <= moderate_frac * n:
        scores = _circular_window_scores(tour, instance.dist, cnt)
        if rng.random() < greedy_prob:
            start = int(np.argmax(scores))
        else:
            total = scores.sum()
            if total > 0:
                start = int(rng.choice(n, p=scores / total))
            else:
                start = int(rng.integers(0, n))
        positions = [(start + i) % n for i in range(cnt)]
    else:
        positions = []
        seen = set()
        remaining = cnt
        segments = 0
        while remaining > 0 and segments < n:
            max_seg = min(remaining, max(2, int(cnt * seg_frac)))
            size = int(rng.integers(1, max_seg + 1))
            start = int(rng.integers(0, n))
            for i in range(size):
                pos = (start + i) % n
                if pos not in seen:
                    seen.add(pos)
                    positions.append(pos)
            remaining -= size
            segments += 1
        positions = positions[:cnt]
    removed = [tour[p] for p in positions]
    taken = set(positions)
    partial = [tour[p] for p in range(n) if p not in taken]
    if len(removed) < cnt:
        # random top-up when overlapping segments fell short
        deficit = cnt - len(removed)
        idx = rng.choice(len(partial), size=deficit, replace=False)
        extra = {int(i) for i in idx}
        removed.extend(partial[i] for i in sorted(extra))
        partial = [v for i, v in enumerate(partial) if i not in extra]
    return DestroyOutcome(removed, TourSolution(partial))


def _tour_diversity(path, dist) -> float:
    """Mean consecutive edge length over the largest matrix entry, capped at 1."""
    if len(path) <= 1:
        return 0.5
    total = sum(dist[path[i], path[(i + 1) % len(path)]] for i in range(len(path)))
    dmax = dist.max()
    if dmax <= 0:
        return 1.0
    return float(min(total / len(path) / dmax, 1.0))


def dapi_repair(partial, removed, instance: Instance, rng,
                base_rand: float = 0.1, rand_spread: float = 0.4,
                temp_base: float = 3.0, temp_slope: float = 2.0,
                softmax_prob: float = 0.8,
                two_opt_base: float = 0.2, two_opt_slope: float = 0.5) -> TourSolution:
    """Insertion whose randomness tracks how clustered the tour currently is.

    Low diversity (short average edges relative to the instance span) raises
    both the uniform-insertion probability and the softmax temperature; the
    remaining strategic picks sample positions by softmax over insertion
    deltas, falling back to pure argmin. A first-improvement two-opt pass
    runs afterwards with probability two_opt_base + two_opt_slope*threshold.
    """
    _require_tour(partial)
    if not removed:
        return partial.copy()
    work = list(partial.tour)
    dist = instance.dist
    if len(work) <= 1:
        order = list(removed)
        rng.shuffle(order)
        return TourSolution(work + order)
    diversity = _tour_diversity(work, dist)
    random_threshold = base_rand + rand_spread * (1.0 - diversity)
    temperature = temp_base - temp_slope * diversity
    order = list(removed)
    rng.shuffle(order)
    for city in order:
        arr = np.asarray(work)
        m = len(arr)
        prev = np.concatenate([[arr[-1]], arr])
        nxt = np.concatenate([arr, [arr[0]]])
        costs = dist[prev, city] + dist[city, nxt] - dist[prev, nxt]
        if rng.random() < random_threshold:
            pos = int(rng.integers(0, m + 1))
        elif rng.random() < softmax_prob:
            min_c = costs.min()
            weights = np.exp(-(costs - min_c) / max(1.0, min_c) / temperature)
            pos = int(rng.choice(m + 1, p=weights / weights.sum()))
        else:
            pos = int(np.argmin(costs))
        work.insert(pos, city)
    if rng.random() < (two_opt_base + two_opt_slope * random_threshold):
        _two_opt_sweep(work, dist)
    return TourSolution(work)


def _two_opt_sweep(tour: list[int], dist):
    """First-improvement 2-opt to convergence; reversals apply immediately."""
    n = len(tour)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                if i == 0 and j == n - 1:
                    continue
                a, b = tour[i - 1], tour[i]
                c, d = tour[j], tour[(j + 1) % n]
                delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
                if delta < -1e-12:
                    tour[i:j + 1] = reversed(tour[i:j + 1])
                    improved = True


def pswr_destroy(sol, cnt, instance: Instance, rng, top_k: int = 3) -> DestroyOutcome:
    """Removal that drifts from uniform-random toward worst-saving picks.

    Each step is greedy with probability removed_so_far/cnt: greedy picks
    uniformly among the top_k customers by detour saving (recomputed against
    the current partial); otherwise one customer is drawn uniformly.
    """
    _require_routes(sol)
    customers = sol.customers()
    total = len(customers)
    if cnt < 1:
        raise OperatorError("removal count must be at least 1")
    if cnt >= total:
        return DestroyOutcome(list(customers), RouteSolution([]))
    work = [list(r) for r in sol.routes]
    dist = instance.dist
    depot = instance.depot
    removed = []
    while len(removed) < cnt:
        greedy_ratio = len(removed) / cnt
        if rng.random() < greedy_ratio:
            pairs = []
            for route in work:
                for i, c in enumerate(route):
                    prev = route[i - 1] if i > 0 else depot
                    nxt = route[i + 1] if i < len(route) - 1 else depot
                    saving = float(dist[prev, c] + dist[c, nxt] - dist[prev, nxt])
                    pairs.append((-saving, c))
            pairs.sort()
            top = pairs[:min(top_k, len(pairs))]
            pick = top[int(rng.integers(0, len(top)))][1]
        else:
            remaining = [c for r in work for c in r]
            pick = remaining[int(rng.integers(0, len(remaining)))]
        for route in work:
            if pick in route:
                route.remove(pick)
                break
        removed.append(pick)
    return DestroyOutcome(removed, RouteSolution([r for r in work if r]))


def acagi_repair(partial, removed, instance: Instance, rng,
                 load_pen: float = 0.15, len_pen: float = 0.05, len_div: float = 20.0,
                 explore_lo: float = 0.2, explore_hi: float = 0.4,
                 difficulty_frac: float = 0.3, decay: float = 0.8,
                 greedy_base: float = 0.8, greedy_slope: float = 0.2,
                 merge_len: int = 15, consolidate: bool = True) -> RouteSolution:
    """Regret-style insertion with cached loads and adaptive exploration.

    Tracks a decaying insertion-difficulty signal; when it crosses
    difficulty_frac*len(removed) the regret depth widens to 4 and exploration
    noise grows. Candidate scores mix the cost gap with load- and
    length-balance penalties. A final pass may concatenate route pairs whose
    combined load fits and whose combined stop count stays under merge_len.
    """
    _require_routes(partial)
    demands = instance.demands
    capacity = instance.capacity
    dist = instance.dist
    depot = instance.depot
    new_x = [list(r) for r in partial.routes]
    route_loads = [sum(int(demands[c]) for c in r) for r in new_x]
    insertion_difficulty = 0.0
    for customer_idx, customer in enumerate(removed):
        cust_demand = int(demands[customer])
        feasible = []
        for ri, (route, load) in enumerate(zip(new_x, route_loads)):
            if load + cust_demand > capacity:
                continue
            for pos in range(len(route) + 1):
                prev = route[pos - 1] if pos > 0 else depot
                nxt = route[pos] if pos < len(route) else depot
                delta = float(dist[prev, customer] + dist[customer, nxt] - dist[prev, nxt])
                feasible.append({"cost": delta, "route": ri, "pos": pos,
                                 "load": load, "length": len(route)})
        feasible.append({"cost": float(dist[depot, customer] + dist[customer, depot]),
                         "route": len(new_x), "pos": 0, "load": 0, "length": 0})
        feasible.sort(key=lambda f: f["cost"])
        best_cost = feasible[0]["cost"]
        remaining = len(removed) - customer_idx - 1
        if remaining > 0 and len(feasible) < 3:
            insertion_difficulty = insertion_difficulty * decay + 1.0
        else:
            insertion_difficulty = insertion_difficulty * decay
        threshold = difficulty_frac * len(removed)
        if insertion_difficulty > threshold:
            k_regret = min(4, len(feasible))
            exploration = explore_hi
        else:
            k_regret = min(3, max(2, len(feasible) // 3))
            exploration = explore_lo
        if len(feasible) >= k_regret:
            scored = []
            for i in range(min(k_regret, len(feasible))):
                cand = feasible[i]
                score = cand["cost"] - best_cost
                score += load_pen * (cand["load"] / capacity if capacity > 0 else 0.0)
                if cand["length"] > 0:
                    score += len_pen * (cand["length"] / len_div)
                if rng.random() < exploration and best_cost > 0:
                    score += rng.uniform(-0.1, 0.1) * best_cost
                scored.append((score, i))
            scored.sort()
            if rng.random() < (greedy_base - greedy_slope * (insertion_difficulty / threshold)):
                selected = feasible[scored[0][1]]
            else:
                top_m = min(3, len(scored))
                weights = [1.0 / (i + 1) for i in range(top_m)]
                draw = rng.random() * sum(weights)
                cumulative = 0.0
                selected = feasible[scored[0][1]]
                for j, w in enumerate(weights):
                    cumulative += w
                    if draw <= cumulative:
                        selected = feasible[scored[j][1]]
                        break
        else:
            selected = feasible[0]
        if selected["route"] == len(new_x):
            new_x.append([customer])
            route_loads.append(cust_demand)
        else:
            new_x[selected["route"]].insert(selected["pos"], customer)
            route_loads[selected["route"]] += cust_demand
    routes = [r for r in new_x if r]
    loads = [l for r, l in zip(new_x, route_loads) if r]
    if consolidate and len(routes) > 1:
        merged, merged_loads = [], []
        used = [False] * len(routes)
        for i in range(len(routes)):
            if used[i]:
                continue
            cur, cur_load = routes[i], loads[i]
            for j in range(i + 1, len(routes)):
                if used[j]:
                    continue
                if cur_load + loads[j] <= capacity and len(cur) + len(routes[j]) < merge_len:
                    cur = cur + routes[j]
                    cur_load += loads[j]
                    used[j] = True
            merged.append(cur)
            merged_loads.append(cur_load)
            used[i] = True
        routes = merged
    return RouteSolution(routes)
