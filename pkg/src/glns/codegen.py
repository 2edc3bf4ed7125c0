"""Prompt rendering, response parsing, and generation backends.

The gateway turns evolution actions (i1/i2, m1/m2, c1, c2) into prompts,
sends them to a backend, and parses the reply into tagged source artifacts.
Two backends exist: a remote chat-completion endpoint, and a deterministic
offline mock that answers every prompt with a parameterized variant of the
builtin operator templates. The mock is the default so runs and tests need
no network.
"""

from __future__ import annotations

import ast
import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field

from . import opsources
from .errors import BackendError, ParseError
from .operators import BUILTINS, DESTROY, REPAIR
from .operators.base import OperatorRecord, jitter_one_param as _jitter_one_param
from .rand import make_rng

ACTIONS = ("i1", "i2", "m1", "m2", "c1", "c2")

M1_ADVICE = ("Generate novel algorithmic mechanisms or formulas to replace "
             "existing logic components.")
M2_ADVICE = ("Adjust current parameter settings (e.g., the degree of randomization "
             "or greedy thresholds) to optimize operator behavior.")

_DATA_DOC = {
    "tsp": ("`distance_matrix`, the full symmetric matrix of pairwise node "
            "distances (indexable as distance_matrix[i][j])."),
    "vrp": ("`problem_data`, a dict with keys 'distance_matrix' (2D matrix), "
            "'demands' (per-node integer demands, depot 0), 'capacity' (vehicle "
            "capacity), 'depot_idx' (depot node index) and 'coordinates'."),
}

TASK_DESCRIPTIONS = {
    ("tsp", DESTROY): (
        "Traveling Salesman Problem: `current_solution` is a closed tour given as a "
        "list of node indices (the return edge to the first node is implicit). "
        "Remove exactly `destroy_cnt` nodes so that a repair operator can rebuild a "
        "shorter tour. The third input is " + _DATA_DOC["tsp"]),
    ("tsp", REPAIR): (
        "Traveling Salesman Problem: `partial_solution` is a tour (list of node "
        "indices) with some nodes removed, and `removed_elements` lists the missing "
        "nodes. Re-insert every removed node to produce a complete tour of minimum "
        "length. The third input is " + _DATA_DOC["tsp"]),
    ("cvrp", DESTROY): (
        "Capacitated Vehicle Routing Problem: `current_solution` is a list of "
        "routes, each a list of customer indices; the depot is implicit at both "
        "ends of every route. Remove exactly `destroy_cnt` customers and drop any "
        "route that becomes empty. The third input is " + _DATA_DOC["vrp"]),
    ("cvrp", REPAIR): (
        "Capacitated Vehicle Routing Problem: `partial_solution` is a list of "
        "routes with some customers removed, `removed_elements` lists the missing "
        "customers. Re-insert every customer so that no route load exceeds the "
        "vehicle capacity (open a new route when nothing fits) while keeping the "
        "total travel distance low. The third input is " + _DATA_DOC["vrp"]),
}
TASK_DESCRIPTIONS[("ovrp", DESTROY)] = TASK_DESCRIPTIONS[("cvrp", DESTROY)]
TASK_DESCRIPTIONS[("ovrp", REPAIR)] = (
    TASK_DESCRIPTIONS[("cvrp", REPAIR)]
    + " Routes are open: vehicles do not return to the depot, so the final "
    "arc back to the depot is not travelled.")

_INIT_TEMPLATE = """You are an expert in heuristic optimization algorithms, specifically Adaptive Large Neighborhood Search (ALNS).
Your task is to design a new '{role_title} Operator' ({role_word} operator) for the following problem:

Problem Description:
{task_description}

Existing {role_title} Operators (Reference):
{operators_str}

Requirements:
1. First, describe your new algorithm and main steps in one sentence. The description must be inside a brace. Next, implement it in Python as a function named {entry}.
2. This function must accept 3 inputs: {inputs}.
3. The function must return {n_out} output{plural}: {outputs}.
4. The logic should be strictly different from the existing ones provided in the reference to improve population diversity.
5. Do not give additional explanations.
"""

_MUTATION_TEMPLATE = """You are an algorithm optimizer. We have a {operator_type} operator for LNS.

Problem Description:
{task_description}

Strategy:
{advice}

Current Code:
{operator_code}

Task:
Refine and improve this operator code based on the strategy above.
1. Refine and improve this operator strictly following the strategy provided above.
2. First, describe the refined algorithm in one sentence inside a brace, then give the implementation.
3. If you need helper functions, define them INSIDE the main function.
4. Do not give additional explanations.
"""

_HOMO_TEMPLATE = """You are an expert in heuristic optimization.
Your task is to create a NEW {operator_type} operator by combining the ideas/logic of two parent operators.

Problem Description:
{task_description}

Parent 1 Code (Inspiration Source):
{parent1_code}

Parent 2 Code (Structural Base):
{parent2_code}

Task:
Please create a new algorithm that has a similar form to Parent 2 and is inspired by Parent 1. The new algorithm should outperform both parents.
1. Describe the design idea of the new algorithm and its main steps in one sentence, inside a brace.
2. Next, implement it in Python following the standard LNS {operator_type} signature strictly.
3. Define all helper functions INSIDE the main function.
4. Do not give additional explanations.
"""

_JOINT_TEMPLATE = """You are an expert in heuristic optimization.
We are employing a "Synergistic Joint Crossover (Structural Coupling)" strategy to evolve LNS operators.

Problem Description:
{task_description}

Selected High-Synergy Pair:
Parent Destroy Operator:
{destroy_code}

Parent Repair Operator:
{repair_code}

Task:
Evolve this pair as a UNIFIED ENTITY to create a new Destroy-Repair pair.
Ensure that the generated Repair operator is specifically tailored to reconstruct the structural defects introduced by the generated Destroy operator, thereby maximizing their synergistic performance.

Requirements:
1. Design a NEW Destroy operator and a NEW Repair operator.
2. Describe the joint design in one sentence inside a brace.
3. Both must follow standard LNS signatures strictly (functions named destroy and repair).
4. Define all helper functions INSIDE the main functions.
5. Return ONE code block containing BOTH the new Destroy operator and the new Repair operator.
6. Do not give additional explanations.
"""


@dataclass
class GenerationRequest:
    action: str
    problem_kind: str                       # tsp | cvrp | ovrp
    operator_kind: str | None = None        # destroy | repair (None for c2)
    parents: list[OperatorRecord] = field(default_factory=list)
    references: list[OperatorRecord] = field(default_factory=list)

    def validate(self):
        if self.action not in ACTIONS:
            raise ParseError(f"unknown action {self.action}")
        arity = {"i1": 0, "i2": 0, "m1": 1, "m2": 1, "c1": 2, "c2": 2}[self.action]
        if len(self.parents) != arity:
            raise ParseError(f"action {self.action} needs {arity} parents, "
                             f"got {len(self.parents)}")
        if self.action in ("m1", "m2", "c1") and self.operator_kind not in (DESTROY, REPAIR):
            raise ParseError(f"action {self.action} needs an operator kind")


@dataclass
class GenerationResponse:
    description: str
    artifacts: list[tuple[str, str]]        # (role, source)
    raw: str


def _source_of(record: OperatorRecord) -> str:
    if record.source:
        return record.source
    from .operators.base import BuiltinImpl
    if isinstance(record.impl, BuiltinImpl):
        spec = BUILTINS[record.impl.name]
        params = dict(spec.defaults)
        params.update(record.impl.params)
        return opsources.render_source(record.impl.name, params)
    raise ParseError(f"record {record.id} has no source text")


def _reference_listing(records) -> str:
    if not records:
        return "(none yet)"
    chunks = []
    for k, rec in enumerate(records, start=1):
        chunks.append(f"No.{k} {rec.description}\n```python\n{_source_of(rec)}\n```")
    return "\n".join(chunks)


def _task_description(kind: str, role: str) -> str:
    return TASK_DESCRIPTIONS[(kind, role)]


def render_prompt(request: GenerationRequest) -> str:
    """Byte-stable prompt text for a generation request."""
    request.validate()
    act = request.action
    if act in ("i1", "i2"):
        role = DESTROY if act == "i1" else REPAIR
        vrp = request.problem_kind != "tsp"
        third = "'problem_data'" if vrp else "'distance_matrix'"
        if role == DESTROY:
            inputs = f"'current_solution', 'destroy_cnt', {third}"
            outputs, n_out, plural = "'removed_elements', 'partial_solution'", 2, "s"
        else:
            inputs = f"'partial_solution', 'removed_elements', {third}"
            outputs, n_out, plural = "'complete_solution'", 1, ""
        return _INIT_TEMPLATE.format(
            role_title=role.capitalize(),
            role_word="removal" if role == DESTROY else "insertion",
            task_description=_task_description(request.problem_kind, role),
            operators_str=_reference_listing(request.references),
            entry="destroy" if role == DESTROY else "repair",
            inputs=inputs, outputs=outputs, n_out=n_out, plural=plural)
    if act in ("m1", "m2"):
        return _MUTATION_TEMPLATE.format(
            operator_type=request.operator_kind.capitalize(),
            task_description=_task_description(request.problem_kind, request.operator_kind),
            advice=M1_ADVICE if act == "m1" else M2_ADVICE,
            operator_code=_source_of(request.parents[0]))
    if act == "c1":
        return _HOMO_TEMPLATE.format(
            operator_type=request.operator_kind.capitalize(),
            task_description=_task_description(request.problem_kind, request.operator_kind),
            parent1_code=_source_of(request.parents[0]),
            parent2_code=_source_of(request.parents[1]))
    destroy_parent = next(p for p in request.parents if p.kind == DESTROY)
    repair_parent = next(p for p in request.parents if p.kind == REPAIR)
    return _JOINT_TEMPLATE.format(
        task_description=_task_description(request.problem_kind, DESTROY),
        destroy_code=_source_of(destroy_parent),
        repair_code=_source_of(repair_parent))


# --- response parsing ---------------------------------------------------------

_FENCE_RE = re.compile(r"```[a-zA-Z0-9]*\n(.*?)```", re.DOTALL)
_ENTRY_NAMES = {DESTROY: ("destroy",), REPAIR: ("repair", "insert")}


def _top_level_functions(source: str):
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        raise ParseError(f"artifact is not valid Python: {exc.msg}", line=exc.lineno) from None
    lines = source.splitlines()
    funcs = []
    prelude_idx = set(range(len(lines)))
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            span = set(range(node.lineno - 1, node.end_lineno))
            prelude_idx -= span
            funcs.append((node.name, "\n".join(lines[node.lineno - 1:node.end_lineno])))
    prelude = "\n".join(lines[i] for i in sorted(prelude_idx)).strip()
    return prelude, funcs


def _entry_role(name: str) -> str | None:
    for role, names in _ENTRY_NAMES.items():
        if name in names:
            return role
    return None


def parse_response(text: str, action: str, operator_kind: str | None = None) -> GenerationResponse:
    """Extract the brace description and the tagged source artifacts.

    For c2 the single code block is split at top-level function boundaries
    and the entry points are matched by name (destroy vs repair/insert);
    anything missing a required artifact is a parse error.
    """
    blocks = _FENCE_RE.findall(text)
    prose = _FENCE_RE.sub("", text)
    match = re.search(r"\{([^{}]+)\}", prose)
    description = match.group(1).strip() if match else ""
    if not blocks:
        raise ParseError("response contains no code block")
    if action == "c2":
        prelude, funcs = _top_level_functions("\n\n".join(blocks))
        found = {}
        for name, body in funcs:
            role = _entry_role(name)
            if role and role not in found:
                found[role] = (prelude + "\n\n" + body).strip() if prelude else body
        if DESTROY not in found or REPAIR not in found:
            raise ParseError("joint crossover response must define both a destroy "
                             "and a repair function")
        artifacts = [(DESTROY, found[DESTROY]), (REPAIR, found[REPAIR])]
        return GenerationResponse(description, artifacts, text)
    source = blocks[0].strip()
    _, funcs = _top_level_functions(source)
    roles = [r for r in (_entry_role(name) for name, _ in funcs) if r]
    if not roles:
        raise ParseError("response defines no destroy/repair entry point")
    role = roles[0]
    expected = {"i1": DESTROY, "i2": REPAIR}.get(action, operator_kind)
    if expected and role != expected:
        raise ParseError(f"expected a {expected} operator, found {role}")
    return GenerationResponse(description, [(role, source)], text)


# --- backends -------------------------------------------------------------

@dataclass
class BackendConfig:
    mode: str = "mock"                      # mock | remote
    endpoint: str = ""
    api_key: str = ""
    model: str = ""
    temperature: float = 0.8
    max_tokens: int = 2048
    retries: int = 3
    timeout: float = 60.0
    mock_seed: int = 0

    def apply_env(self, env=None) -> "BackendConfig":
        env = os.environ if env is None else env
        self.endpoint = env.get("GLNS_LLM_ENDPOINT", self.endpoint)
        self.api_key = env.get("GLNS_LLM_KEY", self.api_key)
        self.model = env.get("GLNS_LLM_MODEL", self.model)
        return self


def backend_generate(prompt: str, config: BackendConfig) -> str:
    """Raw backend text for a prompt: remote chat completion, or the mock."""
    if config.mode == "mock":
        return _mock_response(prompt, config)
    return _remote_generate(prompt, config)


def _remote_generate(prompt: str, config: BackendConfig) -> str:
    import requests

    body = {
        "model": config.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    last_error = None
    for attempt in range(max(1, config.retries)):
        try:
            resp = requests.post(config.endpoint, json=body, headers=headers,
                                 timeout=config.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            last_error = exc
            time.sleep(min(0.5 * 2 ** attempt, 8.0))
    raise BackendError(f"backend unreachable after {config.retries} attempts: {last_error}")


# --- deterministic mock -----------------------------------------------------

_MOCK_DESTROY = {"tsp": ("random_removal", "worst_removal", "related_removal", "acsr_destroy"),
                 "vrp": ("random_removal", "worst_removal", "related_removal", "pswr_destroy")}
_MOCK_REPAIR = {"tsp": ("greedy_insertion", "regret_insertion", "dapi_repair"),
                "vrp": ("greedy_insertion", "regret_insertion", "acagi_repair")}


def _prompt_rng(prompt: str, config: BackendConfig):
    digest = hashlib.sha256(prompt.encode()).digest()
    return make_rng(config.mock_seed, int.from_bytes(digest[:8], "big"))


def _random_params(name: str, rng) -> dict:
    spec = BUILTINS[name]
    params = dict(spec.defaults)
    for key, (lo, hi) in spec.param_space.items():
        if isinstance(spec.defaults.get(key), bool):
            continue
        if isinstance(spec.defaults.get(key), int):
            params[key] = int(rng.integers(int(lo), int(hi) + 1))
        else:
            params[key] = round(float(lo + rng.random() * (hi - lo)), 4)
    return params


def _mock_artifact(name: str, params: dict) -> str:
    return opsources.render_source(name, params)


def _wrap(description: str, *sources: str) -> str:
    return "{" + description + "}\n\n```python\n" + "\n\n".join(sources) + "\n```\n"


def _mock_response(prompt: str, config: BackendConfig) -> str:
    """Deterministic canned response derived from (prompt hash, mock seed)."""
    rng = _prompt_rng(prompt, config)
    flavor = "vrp" if "problem_data" in prompt else "tsp"
    markers = [opsources.parse_marker(line) for line in prompt.splitlines()
               if opsources.MARKER_RE.search(line)]
    markers = [m for m in markers if m]

    if "Synergistic Joint Crossover" in prompt:
        d_parent = next((m for m in markers if BUILTINS[m[0]].kind == DESTROY), None)
        r_parent = next((m for m in markers if BUILTINS[m[0]].kind == REPAIR), None)
        d_name, d_params = d_parent if d_parent else (
            _pick(_MOCK_DESTROY[flavor], rng), None)
        r_name, r_params = r_parent if r_parent else (
            _pick(_MOCK_REPAIR[flavor], rng), None)
        d_params, _ = _jitter_one_param(d_name, d_params or _random_params(d_name, rng), rng)
        r_params, _ = _jitter_one_param(r_name, r_params or _random_params(r_name, rng), rng)
        desc = (f"Couples a {d_name} variant with a {r_name} variant tuned to "
                "repair its structural defects")
        return _wrap(desc, _mock_artifact(d_name, d_params), _mock_artifact(r_name, r_params))

    mut = re.search(r"We have a (Destroy|Repair) operator", prompt)
    if mut:
        kind = DESTROY if mut.group(1) == "Destroy" else REPAIR
        parent = next((m for m in markers if BUILTINS[m[0]].kind == kind), None)
        pool = _MOCK_DESTROY[flavor] if kind == DESTROY else _MOCK_REPAIR[flavor]
        if M2_ADVICE.splitlines()[0][:20] in prompt:
            name, params = parent if parent else (_pick(pool, rng), None)
            params, key = _jitter_one_param(name, params or _random_params(name, rng), rng)
            desc = f"Recalibrates the {key or 'core'} parameter of {name} for better balance"
            return _wrap(desc, _mock_artifact(name, params))
        # logic evolution: swap in a different mechanism of the same kind
        exclude = parent[0] if parent else None
        choices = [n for n in pool if n != exclude] or list(pool)
        name = _pick(choices, rng)
        desc = f"Replaces the parent logic with a {name} mechanism"
        return _wrap(desc, _mock_artifact(name, _random_params(name, rng)))

    homo = re.search(r"create a NEW (Destroy|Repair) operator", prompt)
    if homo:
        kind = DESTROY if homo.group(1) == "Destroy" else REPAIR
        kin = [m for m in markers if BUILTINS[m[0]].kind == kind]
        pool = _MOCK_DESTROY[flavor] if kind == DESTROY else _MOCK_REPAIR[flavor]
        base = kin[1] if len(kin) > 1 else (kin[0] if kin else (_pick(pool, rng), None))
        name = base[0]
        params = dict(base[1]) if base[1] else _random_params(name, rng)
        if len(kin) > 1 and kin[0][1]:
            for key, value in kin[0][1].items():
                if key in params and isinstance(value, (int, float)) and not isinstance(value, bool):
                    blended = (params[key] + value) / 2
                    params[key] = int(round(blended)) if isinstance(
                        BUILTINS[name].defaults.get(key), int) else round(float(blended), 4)
        params, _ = _jitter_one_param(name, params, rng)
        desc = f"Hybrid {name} keeping the structural base and blending parent traits"
        return _wrap(desc, _mock_artifact(name, params))

    # initialization: a fresh randomly parameterized builtin variant
    if re.search(r"design a new 'Destroy Operator'", prompt):
        pool = _MOCK_DESTROY[flavor]
    else:
        pool = _MOCK_REPAIR[flavor]
    name = _pick(pool, rng)
    params = _random_params(name, rng)
    desc = f"A {name} variant with freshly sampled control parameters"
    return _wrap(desc, _mock_artifact(name, params))


def _pick(seq, rng):
    return seq[int(rng.integers(0, len(seq)))]


# --- gateway ----------------------------------------------------------------

@dataclass
class TranscriptEntry:
    ts: float
    action: str
    prompt_sha: str
    response: str
    latency_ms: float

    def to_json(self) -> dict:
        return {"ts": self.ts, "action": self.action, "prompt_sha": self.prompt_sha,
                "response": self.response, "latency_ms": self.latency_ms}


class CodegenGateway:
    """Render, call, log, parse. One transcript entry per backend call."""

    def __init__(self, config: BackendConfig | None = None, transcript_path=None):
        self.config = config or BackendConfig()
        self.transcript: list[TranscriptEntry] = []
        self._transcript_path = transcript_path

    def generate(self, request: GenerationRequest, salt: int | None = None) -> GenerationResponse:
        """Run one action; `salt` varies the mock stream so retries differ."""
        prompt = render_prompt(request)
        config = self.config
        if salt is not None and config.mode == "mock":
            config = BackendConfig(**{**config.__dict__,
                                      "mock_seed": config.mock_seed * 1_000_003 + salt})
        started = time.time()
        text = backend_generate(prompt, config)
        entry = TranscriptEntry(
            ts=started, action=request.action,
            prompt_sha=hashlib.sha256(prompt.encode()).hexdigest(),
            response=text, latency_ms=(time.time() - started) * 1000.0)
        self.transcript.append(entry)
        if self._transcript_path:
            with open(self._transcript_path, "a") as fh:
                fh.write(json.dumps(entry.to_json()) + "\n")
        return parse_response(text, request.action, request.operator_kind)
