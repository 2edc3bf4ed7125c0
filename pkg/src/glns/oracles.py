"""Exact reference solvers for small instances.

Bitmask dynamic programming keeps these usable up to roughly 13 nodes for
tours and 10 customers for route problems; they back reference tables and
the solver-quality checks, and share no code with the search engine.
"""

from __future__ import annotations

import numpy as np

from .problems import CVRP, Instance, RouteSolution, TourSolution

_INF = float("inf")


def held_karp_tsp(dist) -> tuple[float, list[int]]:
    """Optimal closed tour (cost, tour) for a symmetric distance matrix."""
    d = np.asarray(dist, dtype=float)
    n = len(d)
    if n == 2:
        return float(d[0][1] + d[1][0]), [0, 1]
    full = (1 << n) - 1
    # dp[mask][last]: best path 0 -> ... -> last visiting exactly `mask`
    dp = [[_INF] * n for _ in range(1 << n)]
    parent = [[-1] * n for _ in range(1 << n)]
    dp[1][0] = 0.0
    for mask in range(1 << n):
        if not mask & 1:
            continue
        row = dp[mask]
        for last in range(n):
            base = row[last]
            if base == _INF:
                continue
            dl = d[last]
            for nxt in range(1, n):
                bit = 1 << nxt
                if mask & bit:
                    continue
                cand = base + dl[nxt]
                if cand < dp[mask | bit][nxt]:
                    dp[mask | bit][nxt] = cand
                    parent[mask | bit][nxt] = last
    best_cost = _INF
    best_last = -1
    for last in range(1, n):
        cand = dp[full][last] + d[last][0]
        if cand < best_cost:
            best_cost = cand
            best_last = last
    tour = []
    mask, last = full, best_last
    while last != -1:
        tour.append(last)
        mask, last = mask ^ (1 << last), parent[mask][last]
    tour.reverse()
    return float(best_cost), tour


def _route_dp(instance: Instance, customers: list[int]):
    """dp[mask][last]: cheapest depot -> ... -> customers[last] path over mask."""
    d = instance.dist
    depot = instance.depot
    m = len(customers)
    dp = [[_INF] * m for _ in range(1 << m)]
    for i, c in enumerate(customers):
        dp[1 << i][i] = float(d[depot][c])
    for mask in range(1 << m):
        row = dp[mask]
        for last in range(m):
            base = row[last]
            if base == _INF:
                continue
            for nxt in range(m):
                bit = 1 << nxt
                if mask & bit:
                    continue
                cand = base + d[customers[last]][customers[nxt]]
                if cand < dp[mask | bit][nxt]:
                    dp[mask | bit][nxt] = cand
    return dp


def exact_route_solution(instance: Instance) -> tuple[float, RouteSolution]:
    """Optimal CVRP/OVRP cost by set-partition DP over capacity-feasible routes."""
    customers = instance.customers()
    m = len(customers)
    if m == 0:
        return 0.0, RouteSolution([])
    demands = instance.demands
    depot = instance.depot
    closed = instance.kind == CVRP
    dp = _route_dp(instance, customers)
    d = instance.dist

    load = [0] * (1 << m)
    route_cost = [_INF] * (1 << m)
    route_end = [-1] * (1 << m)
    for mask in range(1, 1 << m):
        low = mask & -mask
        load[mask] = load[mask ^ low] + int(demands[customers[low.bit_length() - 1]])
        if load[mask] > instance.capacity:
            continue
        best = _INF
        best_last = -1
        for last in range(m):
            if not mask & (1 << last) or dp[mask][last] == _INF:
                continue
            cand = dp[mask][last] + (d[customers[last]][depot] if closed else 0.0)
            if cand < best:
                best = cand
                best_last = last
        route_cost[mask] = best
        route_end[mask] = best_last

    full = (1 << m) - 1
    best = [_INF] * (1 << m)
    choice = [0] * (1 << m)
    best[0] = 0.0
    for mask in range(1, 1 << m):
        low = mask & -mask
        sub = mask
        while sub:
            if sub & low and route_cost[sub] < _INF:
                cand = best[mask ^ sub] + route_cost[sub]
                if cand < best[mask]:
                    best[mask] = cand
                    choice[mask] = sub
            sub = (sub - 1) & mask
    routes = []
    mask = full
    while mask:
        sub = choice[mask]
        routes.append(_reconstruct_route(dp, sub, route_end[sub], customers, instance))
        mask ^= sub
    return float(best[full]), RouteSolution(routes)


def _reconstruct_route(dp, mask, last, customers, instance):
    d = instance.dist
    order = []
    while last != -1 and mask:
        order.append(customers[last])
        prev_mask = mask ^ (1 << last)
        nxt = -1
        if prev_mask:
            target = dp[mask][last]
            for cand in range(len(customers)):
                if not prev_mask & (1 << cand) or dp[prev_mask][cand] == _INF:
                    continue
                step = dp[prev_mask][cand] + d[customers[cand]][customers[last]]
                if abs(step - target) < 1e-9:
                    nxt = cand
                    break
        mask, last = prev_mask, nxt
    order.reverse()
    return order


def exact_cost(instance: Instance) -> float:
    """Optimal objective for any supported kind (small instances only)."""
    if instance.kind == "tsp":
        return held_karp_tsp(instance.dist)[0]
    return exact_route_solution(instance)[0]


def optimal_tour(instance: Instance) -> TourSolution:
    return TourSolution(held_karp_tsp(instance.dist)[1])
