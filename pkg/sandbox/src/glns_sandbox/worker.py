"""Sandbox worker: executes operator source received over a line protocol.

Reads one JSON request per line on stdin and writes one JSON reply per line
on stdout, echoing the request's `seq`. Operators are compiled into a
namespace restricted to an import allowlist (math, random, copy, numpy) and
a curated set of builtins. Runtime errors and per-call timeouts produce
error replies; only `shutdown` (or EOF) ends the session.

Request ops
    ping                          -> {proto_version, pid}
    instance {id, coords, demands?, capacity?, depot?, rounded?}
    load     {id, source, kind}
    destroy  {id, instance, solution, count, seed, timeout_ms}
    repair   {id, instance, partial, removed, seed, timeout_ms}
    shutdown

Reply: {seq, status: ok|error|timeout, result?, error: {message, category}}
with category one of syntax / runtime / contract / timeout.
"""

from __future__ import annotations

import ast
import json
import math
import random
import signal
import sys

PROTO_VERSION = 1
ALLOWED_IMPORTS = {"math", "random", "copy", "numpy"}

_SAFE_BUILTINS = {
    name: getattr(__builtins__, name) if hasattr(__builtins__, name)
    else __builtins__[name]
    for name in (
        "abs", "all", "any", "bool", "dict", "divmod", "enumerate", "filter",
        "float", "frozenset", "int", "isinstance", "issubclass", "iter", "len",
        "list", "map", "max", "min", "next", "pow", "range", "repr", "reversed",
        "round", "set", "sorted", "str", "sum", "tuple", "zip",
        "ValueError", "TypeError", "IndexError", "KeyError", "ZeroDivisionError",
        "ArithmeticError", "StopIteration", "Exception", "RuntimeError",
    )
}


class SandboxTimeout(Exception):
    pass


class ContractError(Exception):
    pass


def _alarm_handler(signum, frame):
    raise SandboxTimeout()


def _guarded_import(name, *args, **kwargs):
    root = name.split(".")[0]
    if root not in ALLOWED_IMPORTS:
        raise ImportError(f"import of {name!r} is not allowed in the sandbox")
    return __import__(name, *args, **kwargs)


def _check_imports(source: str):
    tree = ast.parse(source)
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            names = [a.name.split(".")[0] for a in node.names]
        elif isinstance(node, ast.ImportFrom):
            names = [(node.module or "").split(".")[0]]
        else:
            continue
        for name in names:
            if name not in ALLOWED_IMPORTS:
                raise ContractError(f"import of {name!r} is not allowed")


class Session:
    def __init__(self):
        self.instances = {}
        self.operators = {}

    # --- instance registry ---

    def register_instance(self, payload):
        import numpy as np

        coords = np.asarray(payload["coords"], dtype=float)
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        if payload.get("rounded"):
            dist = np.floor(dist + 0.5)
        demands = payload.get("demands")
        entry = {
            "coords": coords,
            "dist": dist,
            "demands": None if demands is None else [int(d) for d in demands],
            "capacity": payload.get("capacity"),
            "depot": payload.get("depot"),
        }
        self.instances[payload["id"]] = entry
        return {}

    def _third_arg(self, inst):
        if inst["demands"] is None:
            return inst["dist"]
        return {
            "distance_matrix": inst["dist"],
            "demands": inst["demands"],
            "capacity": inst["capacity"],
            "depot_idx": inst["depot"],
            "coordinates": inst["coords"],
        }

    # --- operator loading ---

    def load(self, payload):
        source = payload["source"]
        kind = payload["kind"]
        try:
            _check_imports(source)
        except SyntaxError as exc:
            raise SyntaxError(str(exc)) from None
        import copy as _copy

        import numpy as _np

        namespace = {
            "__builtins__": dict(_SAFE_BUILTINS, __import__=_guarded_import),
            "math": math, "random": random, "copy": _copy,
            "np": _np, "numpy": _np,
        }
        code = compile(source, f"<operator:{payload['id']}>", "exec")
        exec(code, namespace)
        entry_names = ("destroy",) if kind == "destroy" else ("repair", "insert")
        entry = next((namespace[n] for n in entry_names
                      if n in namespace and callable(namespace[n])), None)
        if entry is None:
            raise ContractError(
                f"source defines no entry point named {' or '.join(entry_names)}")
        self.operators[payload["id"]] = (entry, kind)
        return {}

    # --- invocation ---

    def _entry(self, payload, want_kind):
        op_id = payload["id"]
        if op_id not in self.operators:
            raise ContractError(f"operator {op_id!r} is not loaded")
        entry, kind = self.operators[op_id]
        if kind != want_kind:
            raise ContractError(f"operator {op_id!r} is loaded as {kind}, not {want_kind}")
        inst = self.instances.get(payload["instance"])
        if inst is None:
            raise ContractError(f"instance {payload['instance']!r} is not registered")
        return entry, inst

    def _seed(self, payload):
        import numpy as np

        seed = int(payload.get("seed", 0))
        random.seed(seed)
        np.random.seed(seed % (2 ** 32))

    def invoke_destroy(self, payload):
        entry, inst = self._entry(payload, "destroy")
        self._seed(payload)
        solution = payload["solution"]
        count = int(payload["count"])
        original = _elements(solution)
        with _time_limit(payload.get("timeout_ms")):
            result = entry(_copy_solution(solution), count, self._third_arg(inst))
        if not isinstance(result, tuple) or len(result) != 2:
            raise ContractError("destroy must return (removed_elements, partial_solution)")
        removed, partial = result
        removed = [int(v) for v in removed]
        partial = _normalize_solution(partial)
        if len(removed) != count:
            raise ContractError(f"removed {len(removed)} elements, expected {count}")
        if sorted(removed + _elements(partial)) != sorted(original):
            raise ContractError("removed + partial must cover the original elements exactly")
        return {"removed": removed, "partial": partial}

    def invoke_repair(self, payload):
        entry, inst = self._entry(payload, "repair")
        self._seed(payload)
        partial = payload["partial"]
        removed = [int(v) for v in payload["removed"]]
        expected = sorted(_elements(partial) + removed)
        with _time_limit(payload.get("timeout_ms")):
            result = entry(_copy_solution(partial), list(removed), self._third_arg(inst))
        solution = _normalize_solution(result)
        if sorted(_elements(solution)) != expected:
            raise ContractError("repair output does not cover removed + partial exactly")
        if inst["demands"] is not None:
            if any(inst["depot"] in route for route in solution):
                raise ContractError("depot appears inside a route")
            for ri, route in enumerate(solution):
                load = sum(inst["demands"][c] for c in route)
                if load > inst["capacity"]:
                    raise ContractError(
                        f"route {ri} load {load} exceeds capacity {inst['capacity']}")
        return {"solution": solution}


def _is_nested(sol) -> bool:
    return bool(sol) and not isinstance(sol[0], (int, float)) and hasattr(sol[0], "__len__")


def _elements(sol):
    if _is_nested(sol):
        return [int(c) for r in sol for c in r]
    return [int(v) for v in sol]


def _copy_solution(sol):
    if _is_nested(sol):
        return [list(r) for r in sol]
    return list(sol)


def _normalize_solution(sol):
    if sol is None:
        raise ContractError("operator returned None")
    sol = list(sol)
    if _is_nested(sol):
        return [[int(v) for v in r] for r in sol if len(r) > 0]
    return [int(v) for v in sol]


class _time_limit:
    def __init__(self, timeout_ms):
        self.seconds = (timeout_ms or 0) / 1000.0

    def __enter__(self):
        if self.seconds > 0:
            signal.signal(signal.SIGALRM, _alarm_handler)
            signal.setitimer(signal.ITIMER_REAL, self.seconds)

    def __exit__(self, *exc):
        if self.seconds > 0:
            signal.setitimer(signal.ITIMER_REAL, 0)
        return False


_CATEGORIES = {
    SyntaxError: "syntax",
    ContractError: "contract",
    SandboxTimeout: "timeout",
}


def handle(session: Session, request: dict) -> dict:
    seq = request.get("seq", -1)
    op = request.get("op")
    try:
        if op == "ping":
            import os
            return {"seq": seq, "status": "ok",
                    "result": {"proto_version": PROTO_VERSION, "pid": os.getpid()}}
        if op == "instance":
            return {"seq": seq, "status": "ok", "result": session.register_instance(request)}
        if op == "load":
            return {"seq": seq, "status": "ok", "result": session.load(request)}
        if op == "destroy":
            return {"seq": seq, "status": "ok", "result": session.invoke_destroy(request)}
        if op == "repair":
            return {"seq": seq, "status": "ok", "result": session.invoke_repair(request)}
        if op == "shutdown":
            return {"seq": seq, "status": "ok", "result": {"bye": True}, "_shutdown": True}
        return {"seq": seq, "status": "error",
                "error": {"message": f"unknown op {op!r}", "category": "contract"}}
    except SandboxTimeout:
        return {"seq": seq, "status": "timeout",
                "error": {"message": "operator exceeded its time budget",
                          "category": "timeout"}}
    except tuple(_CATEGORIES) as exc:
        return {"seq": seq, "status": "error",
                "error": {"message": str(exc), "category": _CATEGORIES[type(exc)]}}
    except Exception as exc:  # operator bugs land here; the session survives
        return {"seq": seq, "status": "error",
                "error": {"message": f"{type(exc).__name__}: {exc}",
                          "category": "runtime"}}


def main():
    session = Session()
    out = sys.stdout
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            out.write(json.dumps({"seq": -1, "status": "error",
                                  "error": {"message": f"bad request: {exc}",
                                            "category": "contract"}}) + "\n")
            out.flush()
            continue
        reply = handle(session, request)
        shutdown = reply.pop("_shutdown", False)
        out.write(json.dumps(reply) + "\n")
        out.flush()
        if shutdown:
            break


if __name__ == "__main__":
    main()
