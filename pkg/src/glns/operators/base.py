"""Operator abstraction: outcome/record types, dispatch and the builtin registry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..errors import OperatorError
from ..problems import RouteSolution, TourSolution

DESTROY = "destroy"
REPAIR = "repair"


def destroy_count(n: int, epsilon: float) -> int:
    """Number of elements to remove: max(1, round(eps*n)), capped at n-1."""
    if not 0 < epsilon < 1:
        raise OperatorError(f"destruction ratio must be in (0, 1), got {epsilon}")
    if n < 2:
        raise OperatorError("need at least 2 elements to destroy")
    cnt = max(1, int(epsilon * n + 0.5))
    return min(cnt, n - 1)


@dataclass
class DestroyOutcome:
    """Removed elements plus the partial solution they were excised from."""

    removed: list[int]
    partial: TourSolution | RouteSolution


def solution_elements(sol) -> list[int]:
    """The removable elements of a solution, in traversal order."""
    if isinstance(sol, TourSolution):
        return list(sol.tour)
    return sol.customers()


def check_removal_count(total: int, cnt: int):
    if cnt < 1:
        raise OperatorError("removal count must be at least 1")
    if cnt > total - 1:
        raise OperatorError(f"cannot remove {cnt} of {total} elements")


@dataclass
class BuiltinImpl:
    """Reference to a registered builtin with a concrete parameter map."""

    name: str
    params: dict = field(default_factory=dict)


@dataclass
class SourceImpl:
    """External source text executed through the operator sandbox."""

    source: str


@dataclass
class OperatorRecord:
    """One population member: identity, provenance, and how to run it."""

    id: str
    kind: str                        # DESTROY or REPAIR
    provenance: str                  # "builtin" or "generated"
    description: str
    impl: BuiltinImpl | SourceImpl
    source: str = ""                 # nonempty for generated records
    birth: int = 0                   # insertion counter; larger = younger
    failures: int = 0

    def __post_init__(self):
        if self.provenance == "generated" and not self.source:
            raise ValueError("generated records must carry source text")

    def to_json(self) -> dict:
        doc = {
            "id": self.id,
            "kind": self.kind,
            "provenance": self.provenance,
            "description": self.description,
            "source": self.source,
            "birth": self.birth,
            "failures": self.failures,
        }
        if isinstance(self.impl, BuiltinImpl):
            doc["impl"] = {"builtin": self.impl.name, "params": self.impl.params}
        else:
            doc["impl"] = {"source": self.impl.source}
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "OperatorRecord":
        impl_doc = doc["impl"]
        if "builtin" in impl_doc:
            impl = BuiltinImpl(impl_doc["builtin"], dict(impl_doc.get("params", {})))
        else:
            impl = SourceImpl(impl_doc["source"])
        return cls(id=doc["id"], kind=doc["kind"], provenance=doc["provenance"],
                   description=doc.get("description", ""), impl=impl,
                   source=doc.get("source", ""), birth=doc.get("birth", 0),
                   failures=doc.get("failures", 0))


@dataclass
class BuiltinSpec:
    """Registry entry: implementation plus its tunable parameter space."""

    name: str
    kind: str
    fn: Callable
    defaults: dict
    # param -> (low, high) bounds used when calibrating numeric parameters
    param_space: dict = field(default_factory=dict)

    def make(self, params: dict | None = None) -> Callable:
        merged = dict(self.defaults)
        if params:
            merged.update(params)
        fn = self.fn
        if self.kind == DESTROY:
            return lambda sol, cnt, instance, rng: fn(sol, cnt, instance, rng, **merged)
        return lambda partial, removed, instance, rng: fn(partial, removed, instance, rng, **merged)


BUILTINS: dict[str, BuiltinSpec] = {}


def register(name: str, kind: str, fn: Callable, defaults: dict | None = None,
             param_space: dict | None = None):
    BUILTINS[name] = BuiltinSpec(name, kind, fn, dict(defaults or {}), dict(param_space or {}))


def jitter_one_param(name: str, params: dict, rng) -> tuple[dict, str]:
    """Copy of `params` with one numeric parameter nudged inside its bounds."""
    spec = BUILTINS[name]
    numeric = [k for k, d in spec.defaults.items()
               if not isinstance(d, bool) and k in spec.param_space]
    if not numeric:
        return dict(params), ""
    key = numeric[int(rng.integers(0, len(numeric)))]
    lo, hi = spec.param_space[key]
    old = params.get(key, spec.defaults[key])
    if isinstance(spec.defaults[key], int):
        new = int(min(max(old + (1 if rng.random() < 0.5 else -1), lo), hi))
        if new == old:
            new = int(min(old + 1, hi)) if old < hi else int(old - 1)
    else:
        new = round(float(min(max(old + (rng.random() - 0.5) * 0.4 * (hi - lo), lo), hi)), 4)
        if new == old:
            new = round(float((lo + hi) / 2), 4)
    out = dict(params)
    out[key] = new
    return out, key


def builtin_record(name: str, params: dict | None = None, rec_id: str | None = None,
                   description: str = "", birth: int = 0) -> OperatorRecord:
    spec = BUILTINS[name]
    return OperatorRecord(
        id=rec_id or name, kind=spec.kind, provenance="builtin",
        description=description or f"builtin {name}",
        impl=BuiltinImpl(name, dict(params or {})), birth=birth)


def make_callable(record: OperatorRecord, sandbox=None) -> Callable:
    """Resolve a record to a uniform callable.

    Builtin references run in process; source records are dispatched to the
    sandbox session, which must have the source loaded under the record id.
    """
    if isinstance(record.impl, BuiltinImpl):
        return BUILTINS[record.impl.name].make(record.impl.params)
    if sandbox is None:
        from ..errors import SandboxUnavailableError
        raise SandboxUnavailableError(
            f"record {record.id} carries external source but no sandbox session is attached")
    sandbox.ensure_loaded(record.id, record.impl.source, record.kind)
    if record.kind == DESTROY:
        return lambda sol, cnt, instance, rng: sandbox.run_destroy(record.id, sol, cnt, instance, rng)
    return lambda partial, removed, instance, rng: sandbox.run_repair(record.id, partial, removed, instance, rng)
