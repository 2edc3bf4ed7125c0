"""Standalone source text for every builtin operator.

These render self-contained Python functions with the wire-protocol
signature: destroy(current_solution, destroy_cnt, problem_data) and
repair(partial_solution, removed_elements, problem_data), where
problem_data is a bare distance matrix for tours and a dict with
distance_matrix/demands/capacity/depot_idx for route problems. They are
shown to the code-generation backend as in-context references, emitted by
the offline mock as its canned artifacts, and executed by the sandbox.

Each rendered function carries a first-line marker comment naming the
template and its parameter map, so artifacts produced by the mock can be
recognized and dispatched to the in-process implementation.
"""

from __future__ import annotations

import json
import re

MARKER_RE = re.compile(r"#\s*template:\s*([A-Za-z0-9_]+)\s+params=(\{.*\})")


def marker(name: str, params: dict) -> str:
    return f"# template: {name} params={json.dumps(params, sort_keys=True)}"


def parse_marker(source: str):
    """(template_name, params) if the source carries a marker, else None."""
    m = MARKER_RE.search(source)
    if not m:
        return None
    try:
        return m.group(1), json.loads(m.group(2))
    except json.JSONDecodeError:
        return None


def _fmt(value):
    if isinstance(value, bool):
        return repr(value)
    if isinstance(value, float):
        return repr(round(value, 6))
    return repr(value)


def render_source(name: str, params: dict) -> str:
    try:
        template = _RENDERERS[name]
    except KeyError:
        raise KeyError(f"no source template for operator {name!r}") from None
    filled = {k: _fmt(v) for k, v in params.items()}
    return template(filled, marker(name, params))


def _src_random_removal(p, mark):
    return f'''import random

def destroy(current_solution, destroy_cnt, problem_data):
    {mark}
    q_related = {p["q_related"]}
    dist = problem_data['distance_matrix'] if isinstance(problem_data, dict) else problem_data
    if isinstance(problem_data, dict):
        pool = [c for route in current_solution for c in route]
    else:
        pool = list(current_solution)
    pool = list(pool)
    removed = []
    for _ in range(destroy_cnt):
        if removed and q_related > 0 and random.random() < q_related:
            last = removed[-1]
            pick = min(pool, key=lambda v: (dist[last][v], v))
        else:
            pick = pool[random.randrange(len(pool))]
        pool.remove(pick)
        removed.append(pick)
    taken = set(removed)
    if isinstance(problem_data, dict):
        partial = [[c for c in route if c not in taken] for route in current_solution]
        partial = [r for r in partial if r]
    else:
        partial = [v for v in current_solution if v not in taken]
    return removed, partial
'''


def _src_worst_removal(p, mark):
    return f'''import random

def destroy(current_solution, destroy_cnt, problem_data):
    {mark}
    noise = {p["noise"]}
    is_vrp = isinstance(problem_data, dict)
    dist = problem_data['distance_matrix'] if is_vrp else problem_data
    depot = problem_data.get('depot_idx', 0) if is_vrp else None

    def savings(sol):
        out = []
        if is_vrp:
            for route in sol:
                for i, c in enumerate(route):
                    prev = route[i - 1] if i > 0 else depot
                    nxt = route[i + 1] if i < len(route) - 1 else depot
                    out.append((dist[prev][c] + dist[c][nxt] - dist[prev][nxt], c))
        else:
            n = len(sol)
            for i, c in enumerate(sol):
                prev, nxt = sol[i - 1], sol[(i + 1) % n]
                out.append((dist[prev][c] + dist[c][nxt] - dist[prev][nxt], c))
        return out

    work = [list(r) for r in current_solution] if is_vrp else list(current_solution)
    removed = []
    for _ in range(destroy_cnt):
        pairs = savings(work)
        if noise > 0:
            pairs = [(s * (1 + random.uniform(-noise, noise)), c) for s, c in pairs]
        best = max(s for s, _ in pairs)
        pick = min(c for s, c in pairs if s == best)
        if is_vrp:
            for route in work:
                if pick in route:
                    route.remove(pick)
                    break
        else:
            work.remove(pick)
        removed.append(pick)
    partial = [r for r in work if r] if is_vrp else work
    return removed, partial
'''


def _src_related_removal(p, mark):
    return f'''import random

def destroy(current_solution, destroy_cnt, problem_data):
    {mark}
    power = {p["power"]}
    is_vrp = isinstance(problem_data, dict)
    dist = problem_data['distance_matrix'] if is_vrp else problem_data
    elements = ([c for route in current_solution for c in route]
                if is_vrp else list(current_solution))
    seed = elements[random.randrange(len(elements))]
    rest = sorted((v for v in elements if v != seed), key=lambda v: (dist[seed][v], v))
    removed = [seed]
    while len(removed) < destroy_cnt:
        if power > 0:
            pos = min(int((random.random() ** power) * len(rest)), len(rest) - 1)
        else:
            pos = 0
        removed.append(rest.pop(pos))
    taken = set(removed)
    if is_vrp:
        partial = [[c for c in route if c not in taken] for route in current_solution]
        partial = [r for r in partial if r]
    else:
        partial = [v for v in current_solution if v not in taken]
    return removed, partial
'''


def _src_acsr(p, mark):
    return f'''import random

def destroy(current_solution, destroy_cnt, problem_data):
    {mark}
    greedy_prob = {p["greedy_prob"]}
    moderate_frac = {p["moderate_frac"]}
    seg_frac = {p["seg_frac"]}
    dist = problem_data['distance_matrix'] if isinstance(problem_data, dict) else problem_data
    tour = list(current_solution)
    n = len(tour)
    if destroy_cnt <= moderate_frac * n:
        edges = [dist[tour[i]][tour[(i + 1) % n]] for i in range(n)]
        scores = []
        for s in range(n):
            total = 0.0
            for k in range(destroy_cnt + 1):
                total += edges[(s - 1 + k) % n]
            scores.append(total)
        if random.random() < greedy_prob:
            start = scores.index(max(scores))
        else:
            total = sum(scores)
            if total > 0:
                draw = random.random() * total
                acc = 0.0
                start = n - 1
                for s, sc in enumerate(scores):
                    acc += sc
                    if draw <= acc:
                        start = s
                        break
            else:
                start = random.randrange(n)
        positions = [(start + i) % n for i in range(destroy_cnt)]
    else:
        positions = []
        seen = set()
        remaining = destroy_cnt
        segments = 0
        while remaining > 0 and segments < n:
            max_seg = min(remaining, max(2, int(destroy_cnt * seg_frac)))
            size = random.randint(1, max_seg)
            start = random.randrange(n)
            for i in range(size):
                pos = (start + i) % n
                if pos not in seen:
                    seen.add(pos)
                    positions.append(pos)
            remaining -= size
            segments += 1
        positions = positions[:destroy_cnt]
    removed = [tour[q] for q in positions]
    taken = set(positions)
    partial = [tour[q] for q in range(n) if q not in taken]
    while len(removed) < destroy_cnt and len(partial) > 1:
        idx = random.randrange(len(partial))
        removed.append(partial.pop(idx))
    return removed, partial
'''


def _src_pswr(p, mark):
    return f'''import random

def destroy(current_solution, destroy_cnt, problem_data):
    {mark}
    top_k = {p["top_k"]}
    dist = problem_data['distance_matrix']
    depot = problem_data.get('depot_idx', 0)
    work = [list(r) for r in current_solution]
    customers = [c for r in work for c in r]
    if destroy_cnt >= len(customers):
        return customers, []
    removed = []
    while len(removed) < destroy_cnt:
        ratio = len(removed) / destroy_cnt
        if random.random() < ratio:
            pairs = []
            for route in work:
                for i, c in enumerate(route):
                    prev = route[i - 1] if i > 0 else depot
                    nxt = route[i + 1] if i < len(route) - 1 else depot
                    pairs.append((-(dist[prev][c] + dist[c][nxt] - dist[prev][nxt]), c))
            pairs.sort()
            top = pairs[:min(top_k, len(pairs))]
            pick = top[random.randrange(len(top))][1]
        else:
            remaining = [c for r in work for c in r]
            pick = remaining[random.randrange(len(remaining))]
        for route in work:
            if pick in route:
                route.remove(pick)
                break
        removed.append(pick)
    return removed, [r for r in work if r]
'''


def _src_greedy(p, mark):
    return f'''import random

def repair(partial_solution, removed_elements, problem_data):
    {mark}
    noise = {p["noise"]}
    is_vrp = isinstance(problem_data, dict)
    dist = problem_data['distance_matrix'] if is_vrp else problem_data
    if is_vrp:
        demands = problem_data['demands']
        capacity = problem_data['capacity']
        depot = problem_data.get('depot_idx', 0)
        routes = [list(r) for r in partial_solution]
        loads = [sum(demands[c] for c in r) for r in routes]
        for customer in removed_elements:
            need = demands[customer]
            best = None
            for ri, route in enumerate(routes):
                if loads[ri] + need > capacity:
                    continue
                for pos in range(len(route) + 1):
                    prev = route[pos - 1] if pos > 0 else depot
                    nxt = route[pos] if pos < len(route) else depot
                    delta = dist[prev][customer] + dist[customer][nxt] - dist[prev][nxt]
                    if noise > 0:
                        delta = delta + random.uniform(-noise, noise) * max(abs(delta), 1e-12)
                    if best is None or delta < best[0]:
                        best = (delta, ri, pos)
            if best is None:
                routes.append([customer])
                loads.append(need)
            else:
                routes[best[1]].insert(best[2], customer)
                loads[best[1]] += need
        return [r for r in routes if r]
    tour = list(partial_solution)
    for node in removed_elements:
        if len(tour) < 2:
            tour.append(node)
            continue
        best = None
        for i in range(len(tour)):
            prev, cur = tour[i - 1], tour[i]
            delta = dist[prev][node] + dist[node][cur] - dist[prev][cur]
            if noise > 0:
                delta = delta + random.uniform(-noise, noise) * max(abs(delta), 1e-12)
            if best is None or delta < best[0]:
                best = (delta, i)
        tour.insert(best[1], node)
    return tour
'''


def _src_regret(p, mark):
    return f'''def repair(partial_solution, removed_elements, problem_data):
    {mark}
    k = {p["k"]}
    is_vrp = isinstance(problem_data, dict)
    dist = problem_data['distance_matrix'] if is_vrp else problem_data

    def tour_options(tour, node):
        if len(tour) < 2:
            return [(0.0, len(tour))]
        opts = []
        for i in range(len(tour)):
            prev, cur = tour[i - 1], tour[i]
            opts.append((dist[prev][node] + dist[node][cur] - dist[prev][cur], i))
        opts.sort()
        return opts

    def route_options(routes, loads, customer, need, capacity, depot):
        opts = []
        for ri, route in enumerate(routes):
            if loads[ri] + need > capacity:
                continue
            for pos in range(len(route) + 1):
                prev = route[pos - 1] if pos > 0 else depot
                nxt = route[pos] if pos < len(route) else depot
                opts.append((dist[prev][customer] + dist[customer][nxt] - dist[prev][nxt], ri, pos))
        opts.sort()
        return opts

    if is_vrp:
        demands = problem_data['demands']
        capacity = problem_data['capacity']
        depot = problem_data.get('depot_idx', 0)
        routes = [list(r) for r in partial_solution]
        loads = [sum(demands[c] for c in r) for r in routes]
        pending = list(removed_elements)
        while pending:
            best = None
            for customer in pending:
                opts = route_options(routes, loads, customer, demands[customer], capacity, depot)
                if not opts:
                    regret, placement = float('inf'), None
                else:
                    regret = opts[min(k, len(opts)) - 1][0] - opts[0][0]
                    placement = opts[0]
                if best is None or (-regret, customer) < best[:2]:
                    best = (-regret, customer, placement)
            _, customer, placement = best
            if placement is None:
                routes.append([customer])
                loads.append(demands[customer])
            else:
                routes[placement[1]].insert(placement[2], customer)
                loads[placement[1]] += demands[customer]
            pending.remove(customer)
        return [r for r in routes if r]
    tour = list(partial_solution)
    pending = list(removed_elements)
    while pending:
        best = None
        for node in pending:
            opts = tour_options(tour, node)
            regret = opts[min(k, len(opts)) - 1][0] - opts[0][0]
            if best is None or (-regret, node) < best[:2]:
                best = (-regret, node, opts[0][1])
        _, node, pos = best
        tour.insert(pos, node)
        pending.remove(node)
    return tour
'''


def _src_dapi(p, mark):
    return f'''import math
import random

def repair(partial_solution, removed_elements, problem_data):
    {mark}
    base_rand = {p["base_rand"]}
    rand_spread = {p["rand_spread"]}
    temp_base = {p["temp_base"]}
    temp_slope = {p["temp_slope"]}
    softmax_prob = {p["softmax_prob"]}
    two_opt_base = {p["two_opt_base"]}
    two_opt_slope = {p["two_opt_slope"]}
    dist = problem_data['distance_matrix'] if isinstance(problem_data, dict) else problem_data
    tour = list(partial_solution)
    if not removed_elements:
        return tour
    if len(tour) <= 1:
        order = list(removed_elements)
        random.shuffle(order)
        return tour + order
    m = len(tour)
    total = sum(dist[tour[i]][tour[(i + 1) % m]] for i in range(m))
    dmax = max(max(row) for row in dist)
    diversity = min(total / m / dmax, 1.0) if dmax > 0 else 1.0
    random_threshold = base_rand + rand_spread * (1.0 - diversity)
    temperature = temp_base - temp_slope * diversity
    order = list(removed_elements)
    random.shuffle(order)
    for city in order:
        m = len(tour)
        costs = []
        for i in range(m + 1):
            prev = tour[i - 1] if i > 0 else tour[-1]
            cur = tour[i] if i < m else tour[0]
            costs.append(dist[prev][city] + dist[city][cur] - dist[prev][cur])
        if random.random() < random_threshold:
            pos = random.randint(0, m)
        elif random.random() < softmax_prob:
            min_c = min(costs)
            weights = [math.exp(-(c - min_c) / max(1.0, min_c) / temperature) for c in costs]
            pos = random.choices(range(m + 1), weights=weights)[0]
        else:
            pos = costs.index(min(costs))
        tour.insert(pos, city)
    if random.random() < (two_opt_base + two_opt_slope * random_threshold):
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
                    if dist[a][c] + dist[b][d] - dist[a][b] - dist[c][d] < -1e-12:
                        tour[i:j + 1] = reversed(tour[i:j + 1])
                        improved = True
    return tour
'''


def _src_acagi(p, mark):
    return f'''import random

def repair(partial_solution, removed_elements, problem_data):
    {mark}
    load_pen = {p["load_pen"]}
    len_pen = {p["len_pen"]}
    len_div = {p["len_div"]}
    explore_lo = {p["explore_lo"]}
    explore_hi = {p["explore_hi"]}
    difficulty_frac = {p["difficulty_frac"]}
    decay = {p["decay"]}
    greedy_base = {p["greedy_base"]}
    greedy_slope = {p["greedy_slope"]}
    merge_len = {p["merge_len"]}
    consolidate = {p["consolidate"]}
    demands = problem_data['demands']
    capacity = problem_data['capacity']
    dist = problem_data['distance_matrix']
    depot = problem_data.get('depot_idx', 0)
    routes = [list(r) for r in partial_solution]
    loads = [sum(demands[c] for c in r) for r in routes]
    difficulty = 0.0
    for idx, customer in enumerate(removed_elements):
        need = demands[customer]
        feasible = []
        for ri, route in enumerate(routes):
            if loads[ri] + need > capacity:
                continue
            for pos in range(len(route) + 1):
                prev = route[pos - 1] if pos > 0 else depot
                nxt = route[pos] if pos < len(route) else depot
                delta = dist[prev][customer] + dist[customer][nxt] - dist[prev][nxt]
                feasible.append((delta, ri, pos, loads[ri], len(route)))
        feasible.append((dist[depot][customer] + dist[customer][depot],
                         len(routes), 0, 0, 0))
        feasible.sort(key=lambda f: f[0])
        best_cost = feasible[0][0]
        remaining = len(removed_elements) - idx - 1
        if remaining > 0 and len(feasible) < 3:
            difficulty = difficulty * decay + 1.0
        else:
            difficulty = difficulty * decay
        threshold = difficulty_frac * len(removed_elements)
        if difficulty > threshold:
            k_regret = min(4, len(feasible))
            exploration = explore_hi
        else:
            k_regret = min(3, max(2, len(feasible) // 3))
            exploration = explore_lo
        if len(feasible) >= k_regret:
            scored = []
            for i in range(min(k_regret, len(feasible))):
                cand = feasible[i]
                score = cand[0] - best_cost
                score += load_pen * (cand[3] / capacity if capacity > 0 else 0.0)
                if cand[4] > 0:
                    score += len_pen * (cand[4] / len_div)
                if random.random() < exploration and best_cost > 0:
                    score += random.uniform(-0.1, 0.1) * best_cost
                scored.append((score, i))
            scored.sort()
            if random.random() < (greedy_base - greedy_slope * (difficulty / threshold)):
                chosen = feasible[scored[0][1]]
            else:
                top_m = min(3, len(scored))
                weights = [1.0 / (i + 1) for i in range(top_m)]
                draw = random.random() * sum(weights)
                acc = 0.0
                chosen = feasible[scored[0][1]]
                for jj, w in enumerate(weights):
                    acc += w
                    if draw <= acc:
                        chosen = feasible[scored[jj][1]]
                        break
        else:
            chosen = feasible[0]
        if chosen[1] == len(routes):
            routes.append([customer])
            loads.append(need)
        else:
            routes[chosen[1]].insert(chosen[2], customer)
            loads[chosen[1]] += need
    keep = [(r, l) for r, l in zip(routes, loads) if r]
    routes = [r for r, _ in keep]
    loads = [l for _, l in keep]
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
    return routes
'''


_RENDERERS = {
    "random_removal": _src_random_removal,
    "worst_removal": _src_worst_removal,
    "related_removal": _src_related_removal,
    "acsr_destroy": _src_acsr,
    "pswr_destroy": _src_pswr,
    "greedy_insertion": _src_greedy,
    "regret_insertion": _src_regret,
    "dapi_repair": _src_dapi,
    "acagi_repair": _src_acagi,
}

SOURCE_TEMPLATES = tuple(_RENDERERS)
