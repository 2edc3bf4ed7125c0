"""Problem definitions, cost functions and feasibility checks for TSP/CVRP/OVRP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSolutionError, InvalidSolutionError

TSP = "tsp"
CVRP = "cvrp"
OVRP = "ovrp"
KINDS = (TSP, CVRP, OVRP)


def euclidean_matrix(coords: np.ndarray, rounded: bool = False) -> np.ndarray:
    """Dense pairwise distance matrix; `rounded` applies the TSPLIB nint rule."""
    pts = np.asarray(coords, dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    if rounded:
        dist = np.floor(dist + 0.5)
    return dist


@dataclass
class Instance:
    """One routing problem case. Immutable after construction."""

    kind: str
    coords: np.ndarray          # (n, 2)
    dist: np.ndarray            # (n, n), symmetric, zero diagonal
    demands: np.ndarray | None = None
    capacity: int | None = None
    depot: int | None = None
    name: str = ""
    rounded: bool = False       # TSPLIB nint distances

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.dist = np.asarray(self.dist, dtype=float)
        n = len(self.coords)
        if n < 2:
            raise ValueError("instance needs at least 2 nodes")
        if self.dist.shape != (n, n):
            raise ValueError("distance matrix shape does not match coords")
        if not np.allclose(self.dist, self.dist.T):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(self.dist) != 0.0):
            raise ValueError("distance matrix must have a zero diagonal")
        if np.any(self.dist < 0.0):
            raise ValueError("distances must be nonnegative")
        if self.kind == TSP:
            self.demands = None
            self.capacity = None
            self.depot = None
        else:
            if self.demands is None or self.capacity is None or self.depot is None:
                raise ValueError(f"{self.kind} instance needs demands, capacity and depot")
            self.demands = np.asarray(self.demands, dtype=int)
            if len(self.demands) != n:
                raise ValueError("demands length does not match coords")
            if self.demands[self.depot] != 0:
                raise ValueError("depot demand must be zero")
            if self.capacity <= 0:
                raise ValueError("capacity must be positive")
            if any(d > self.capacity for i, d in enumerate(self.demands) if i != self.depot):
                raise ValueError("every customer demand must fit in one vehicle")
            self.demands.setflags(write=False)
        self.coords.setflags(write=False)
        self.dist.setflags(write=False)

    @classmethod
    def from_coords(cls, kind, coords, demands=None, capacity=None, depot=None,
                    name="", rounded=False) -> "Instance":
        coords = np.asarray(coords, dtype=float)
        return cls(kind=kind, coords=coords, dist=euclidean_matrix(coords, rounded),
                   demands=demands, capacity=capacity, depot=depot, name=name,
                   rounded=rounded)

    @property
    def n(self) -> int:
        return len(self.coords)

    def customers(self) -> list[int]:
        """All non-depot node indices (every node for TSP)."""
        if self.kind == TSP:
            return list(range(self.n))
        return [i for i in range(self.n) if i != self.depot]


@dataclass
class TourSolution:
    """Closed TSP tour as a permutation of node indices."""

    tour: list[int]

    def copy(self) -> "TourSolution":
        return TourSolution(list(self.tour))


@dataclass
class RouteSolution:
    """Routes over customer indices; the depot is implicit at both ends."""

    routes: list[list[int]] = field(default_factory=list)

    def copy(self) -> "RouteSolution":
        return RouteSolution([list(r) for r in self.routes])

    def customers(self) -> list[int]:
        return [c for r in self.routes for c in r]


@dataclass
class Violation:
    kind: str          # "coverage" or "capacity"
    detail: str
    route: int | None = None
    load: int | None = None

    def __str__(self):
        return f"{self.kind}: {self.detail}"


@dataclass
class FeasibilityReport:
    ok: bool
    violations: list[Violation]


def check_feasible(instance: Instance, sol) -> FeasibilityReport:
    """Coverage/capacity report. Violations are data, not errors."""
    violations = []
    if instance.kind == TSP:
        seen = {}
        for v in sol.tour:
            seen[v] = seen.get(v, 0) + 1
        for v in range(instance.n):
            c = seen.pop(v, 0)
            if c == 0:
                violations.append(Violation("coverage", f"node {v} missing"))
            elif c > 1:
                violations.append(Violation("coverage", f"node {v} visited {c} times"))
        for v in seen:
            violations.append(Violation("coverage", f"unknown node {v}"))
    else:
        seen = {}
        for ri, route in enumerate(sol.routes):
            load = 0
            for c in route:
                if c == instance.depot:
                    violations.append(Violation("coverage", f"depot inside route {ri}", route=ri))
                    continue
                seen[c] = seen.get(c, 0) + 1
                load += int(instance.demands[c])
            if load > instance.capacity:
                violations.append(Violation(
                    "capacity", f"route {ri} load {load} > {instance.capacity}",
                    route=ri, load=load))
        for c in instance.customers():
            k = seen.pop(c, 0)
            if k == 0:
                violations.append(Violation("coverage", f"customer {c} missing"))
            elif k > 1:
                violations.append(Violation("coverage", f"customer {c} in {k} routes"))
        for c in seen:
            violations.append(Violation("coverage", f"unknown customer {c}"))
    return FeasibilityReport(ok=not violations, violations=violations)


def tsp_cost(instance: Instance, sol: TourSolution) -> float:
    """Closed tour length; rotation- and reversal-invariant for symmetric dist."""
    tour = sol.tour
    if len(tour) != instance.n:
        raise InvalidSolutionError(
            f"tour has {len(tour)} nodes, instance has {instance.n}")
    t = np.asarray(tour)
    return float(instance.dist[t, np.roll(t, -1)].sum())


def _routes_cost(instance: Instance, sol: RouteSolution) -> float:
    dist = instance.dist
    depot = instance.depot
    total = 0.0
    for route in sol.routes:
        prev = depot
        for c in route:
            total += dist[prev, c]
            prev = c
        total += dist[prev, depot]
    return total


def _require_feasible(instance: Instance, sol: RouteSolution):
    report = check_feasible(instance, sol)
    if not report.ok:
        raise InfeasibleSolutionError(report.violations)


def cvrp_cost(instance: Instance, sol: RouteSolution) -> float:
    """Total length of all closed routes (depot -> ... -> depot)."""
    _require_feasible(instance, sol)
    return float(_routes_cost(instance, sol))


def ovrp_cost(instance: Instance, sol: RouteSolution) -> float:
    """Open-route variant: the final return arc of each route is not travelled."""
    _require_feasible(instance, sol)
    closed = _routes_cost(instance, sol)
    return float(closed - sum(instance.dist[r[-1], instance.depot] for r in sol.routes))


def solution_cost(instance: Instance, sol) -> float:
    if instance.kind == TSP:
        return tsp_cost(instance, sol)
    if instance.kind == CVRP:
        return cvrp_cost(instance, sol)
    return ovrp_cost(instance, sol)
