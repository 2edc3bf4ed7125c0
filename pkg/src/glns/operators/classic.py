"""Classical ALNS seed operators: removal heuristics and insertion heuristics.

Every operator works on both tour and route solutions, never mutates its
input, and breaks ties toward the lowest node index / lowest (route,
position) so that results are reproducible under a fixed rng stream.
"""

from __future__ import annotations

import numpy as np

from ..errors import OperatorError
from ..problems import Instance, RouteSolution, TourSolution
from .base import DestroyOutcome, check_removal_count, solution_elements


def _exclude(sol, removed_set):
    if isinstance(sol, TourSolution):
        return TourSolution([v for v in sol.tour if v not in removed_set])
    routes = [[c for c in r if c not in removed_set] for r in sol.routes]
    return RouteSolution([r for r in routes if r])


def random_removal(sol, cnt, instance: Instance, rng, q_related: float = 0.0) -> DestroyOutcome:
    """Remove `cnt` uniformly chosen elements.

    With q_related > 0 each pick after the first follows the previous removal's
    nearest remaining neighbour with that probability (a mild locality tilt);
    the default is pure uniform removal.
    """
    elements = solution_elements(sol)
    check_removal_count(len(elements), cnt)
    pool = list(elements)
    removed = []
    for _ in range(cnt):
        if removed and q_related > 0 and rng.random() < q_related:
            last = removed[-1]
            pick = min(pool, key=lambda v: (instance.dist[last, v], v))
        else:
            pick = pool[int(rng.integers(0, len(pool)))]
        pool.remove(pick)
        removed.append(pick)
    return DestroyOutcome(removed, _exclude(sol, set(removed)))


def _tour_savings(tour: list[int], dist) -> np.ndarray:
    t = np.asarray(tour)
    prev = np.roll(t, 1)
    nxt = np.roll(t, -1)
    return dist[prev, t] + dist[t, nxt] - dist[prev, nxt]


def _route_savings(routes, instance: Instance):
    """(saving, customer) for every customer, depot-bounded at route ends."""
    dist = instance.dist
    depot = instance.depot
    out = []
    for route in routes:
        for i, c in enumerate(route):
            prev = route[i - 1] if i > 0 else depot
            nxt = route[i + 1] if i < len(route) - 1 else depot
            out.append((float(dist[prev, c] + dist[c, nxt] - dist[prev, nxt]), c))
    return out


def worst_removal(sol, cnt, instance: Instance, rng=None, noise: float = 0.0) -> DestroyOutcome:
    """Remove the elements with the largest detour saving, one at a time.

    Savings are recomputed after each removal. noise > 0 perturbs each saving
    by a factor uniform in [1-noise, 1+noise] before ranking.
    """
    elements = solution_elements(sol)
    check_removal_count(len(elements), cnt)
    removed = []
    if isinstance(sol, TourSolution):
        work = list(sol.tour)
        for _ in range(cnt):
            sav = _tour_savings(work, instance.dist)
            if noise > 0:
                sav = sav * (1 + rng.uniform(-noise, noise, size=len(sav)))
            best = sav.max()
            pick = min(work[i] for i in range(len(work)) if sav[i] == best)
            work.remove(pick)
            removed.append(pick)
        return DestroyOutcome(removed, TourSolution(work))
    work = [list(r) for r in sol.routes]
    for _ in range(cnt):
        pairs = _route_savings(work, instance)
        if noise > 0:
            factors = rng.uniform(1 - noise, 1 + noise, size=len(pairs))
            pairs = [(s * f, c) for (s, c), f in zip(pairs, factors)]
        best = max(s for s, _ in pairs)
        pick = min(c for s, c in pairs if s == best)
        for route in work:
            if pick in route:
                route.remove(pick)
                break
        removed.append(pick)
    return DestroyOutcome(removed, RouteSolution([r for r in work if r]))


def related_removal(sol, cnt, instance: Instance, rng, power: float = 0.0) -> DestroyOutcome:
    """Remove a random seed element plus its cnt-1 nearest companions.

    power > 0 relaxes strict nearest-first into rank-biased sampling
    (rank = floor(u^power * len(candidates)), the classic relatedness trick).
    """
    elements = solution_elements(sol)
    check_removal_count(len(elements), cnt)
    seed = elements[int(rng.integers(0, len(elements)))]
    rest = [v for v in elements if v != seed]
    rest.sort(key=lambda v: (instance.dist[seed, v], v))
    removed = [seed]
    if power > 0:
        while len(removed) < cnt:
            pos = int((rng.random() ** power) * len(rest))
            removed.append(rest.pop(min(pos, len(rest) - 1)))
    else:
        removed.extend(rest[:cnt - 1])
    return DestroyOutcome(removed, _exclude(sol, set(removed)))


def _tour_insertion_costs(tour: list[int], node: int, dist) -> np.ndarray:
    """Delta of inserting `node` before each index of the cyclic tour."""
    t = np.asarray(tour)
    prev = np.roll(t, 1)
    return dist[prev, node] + dist[node, t] - dist[prev, t]


def _insert_tour_greedy(work: list[int], node: int, dist, rng=None, noise: float = 0.0):
    if not work:
        work.append(node)
        return
    if len(work) == 1:
        work.append(node)
        return
    costs = _tour_insertion_costs(work, node, dist)
    if noise > 0:
        costs = costs + rng.uniform(-noise, noise, size=len(costs)) * max(costs.min(), 1e-12)
    work.insert(int(np.argmin(costs)), node)


def _route_positions(work, loads, customer, demand, capacity, dist, depot):
    """All capacity-feasible (delta, route, pos) triples in scan order."""
    out = []
    for ri, route in enumerate(work):
        if loads[ri] + demand > capacity:
            continue
        for pos in range(len(route) + 1):
            prev = route[pos - 1] if pos > 0 else depot
            nxt = route[pos] if pos < len(route) else depot
            out.append((float(dist[prev, customer] + dist[customer, nxt] - dist[prev, nxt]), ri, pos))
    return out


def greedy_insertion(partial, removed, instance: Instance, rng=None, noise: float = 0.0):
    """Insert each removed element, in order, at its cheapest position.

    Deterministic at noise=0: ties fall to the lowest position / lowest
    (route, position). VRP opens a fresh route only when nothing fits.
    """
    if not removed:
        return partial.copy()
    if isinstance(partial, TourSolution):
        work = list(partial.tour)
        for node in removed:
            _insert_tour_greedy(work, node, instance.dist, rng, noise)
        return TourSolution(work)
    work = [list(r) for r in partial.routes]
    loads = [sum(int(instance.demands[c]) for c in r) for r in work]
    for customer in removed:
        demand = int(instance.demands[customer])
        options = _route_positions(work, loads, customer, demand,
                                   instance.capacity, instance.dist, instance.depot)
        if not options:
            work.append([customer])
            loads.append(demand)
            continue
        if noise > 0:
            floor = max(min(o[0] for o in options), 1e-12)
            options = [(c + rng.uniform(-noise, noise) * floor, ri, pos) for c, ri, pos in options]
        _, ri, pos = min(options)
        work[ri].insert(pos, customer)
        loads[ri] += demand
    return RouteSolution([r for r in work if r])


def regret_k_insertion(partial, removed, instance: Instance, k: int = 2, rng=None):
    """Insert the element whose k-th best position costs the most over its best.

    Elements with fewer than k feasible positions use what is available; an
    element with none gets top priority and opens a new route.
    """
    if k < 2:
        raise OperatorError(f"regret depth must be >= 2, got {k}")
    if not removed:
        return partial.copy()
    dist = instance.dist
    if isinstance(partial, TourSolution):
        work = list(partial.tour)
        pending = list(removed)
        while pending:
            best_choice = None   # (-regret, node, position)
            for node in pending:
                if len(work) < 2:
                    regret, pos = 0.0, len(work)
                else:
                    costs = _tour_insertion_costs(work, node, dist)
                    order = np.argsort(costs, kind="stable")
                    kth = order[min(k, len(order)) - 1]
                    regret = float(costs[kth] - costs[order[0]])
                    pos = int(order[0])
                if best_choice is None or (-regret, node) < best_choice[:2]:
                    best_choice = (-regret, node, pos)
            _, node, pos = best_choice
            work.insert(pos, node)
            pending.remove(node)
        return TourSolution(work)
    work = [list(r) for r in partial.routes]
    loads = [sum(int(instance.demands[c]) for c in r) for r in work]
    pending = list(removed)
    while pending:
        best_choice = None   # (-regret, customer, placement or None)
        for customer in pending:
            demand = int(instance.demands[customer])
            options = _route_positions(work, loads, customer, demand,
                                       instance.capacity, dist, instance.depot)
            if not options:
                regret, placement = float("inf"), None
            else:
                options.sort()
                kth = options[min(k, len(options)) - 1]
                regret = kth[0] - options[0][0]
                placement = options[0]
            if best_choice is None or (-regret, customer) < best_choice[:2]:
                best_choice = (-regret, customer, placement)
        _, customer, placement = best_choice
        demand = int(instance.demands[customer])
        if placement is None:
            work.append([customer])
            loads.append(demand)
        else:
            _, ri, pos = placement
            work[ri].insert(pos, customer)
            loads[ri] += demand
        pending.remove(customer)
    return RouteSolution([r for r in work if r])
