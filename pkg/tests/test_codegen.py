import json

import pytest

from glns import opsources
from glns.codegen import (BackendConfig, CodegenGateway, GenerationRequest,
                          M1_ADVICE, M2_ADVICE, backend_generate, parse_response,
                          render_prompt)
from glns.errors import BackendError, ParseError
from glns.evolution import record_from_artifact
from glns.operators import BUILTINS, builtin_record
from glns.operators.base import BuiltinImpl


def seed_records(*names):
    out = []
    for name in names:
        rec = builtin_record(name)
        rec.source = opsources.render_source(name, dict(BUILTINS[name].defaults))
        out.append(rec)
    return out


def test_render_i1_contains_seeds_and_contract():
    seeds = seed_records("random_removal", "worst_removal")
    prompt = render_prompt(GenerationRequest("i1", "tsp", references=seeds))
    assert "random_removal" in prompt and "worst_removal" in prompt
    assert "'current_solution', 'destroy_cnt', 'distance_matrix'" in prompt
    assert "'removed_elements', 'partial_solution'" in prompt
    assert "2 outputs" in prompt


def test_render_i2_repair_contract():
    prompt = render_prompt(GenerationRequest("i2", "cvrp",
                                             references=seed_records("greedy_insertion")))
    assert "'partial_solution', 'removed_elements', 'problem_data'" in prompt
    assert "'complete_solution'" in prompt


def test_render_m2_contains_advice():
    parent = seed_records("worst_removal")[0]
    prompt = render_prompt(GenerationRequest("m2", "tsp", operator_kind="destroy",
                                             parents=[parent]))
    assert M2_ADVICE in prompt
    prompt_m1 = render_prompt(GenerationRequest("m1", "tsp", operator_kind="destroy",
                                                parents=[parent]))
    assert M1_ADVICE in prompt_m1


def test_render_is_byte_stable():
    request = GenerationRequest("i1", "tsp", references=seed_records("random_removal"))
    assert render_prompt(request) == render_prompt(request)


def test_render_validates_arity():
    with pytest.raises(ParseError):
        render_prompt(GenerationRequest("m1", "tsp", operator_kind="destroy"))
    with pytest.raises(ParseError):
        render_prompt(GenerationRequest("c1", "tsp", operator_kind="destroy",
                                        parents=seed_records("random_removal")))


def test_parse_happy_path():
    text = "{Removes random nodes}\n\n```python\ndef destroy(a, b, c):\n    return [], a\n```\n"
    resp = parse_response(text, "i1")
    assert resp.description == "Removes random nodes"
    assert len(resp.artifacts) == 1
    assert resp.artifacts[0][0] == "destroy"


def test_parse_c2_splits_both_functions():
    block = ("import random\n\ndef destroy(a, b, c):\n    return [], a\n\n"
             "def insert(a, b, c):\n    return a\n")
    text = "{Joint pair}\n\n```python\n" + block + "```\n"
    resp = parse_response(text, "c2")
    roles = dict(resp.artifacts)
    assert set(roles) == {"destroy", "repair"}
    assert "def destroy" in roles["destroy"]
    assert "def insert" in roles["repair"]
    assert "import random" in roles["destroy"]


def test_parse_prose_only_rejected():
    with pytest.raises(ParseError):
        parse_response("{sounds great}\nno code here", "i1")


def test_parse_c2_missing_repair_rejected():
    text = "{x}\n```python\ndef destroy(a, b, c):\n    return [], a\n```"
    with pytest.raises(ParseError):
        parse_response(text, "c2")


def test_parse_kind_mismatch_rejected():
    text = "{x}\n```python\ndef repair(a, b, c):\n    return a\n```"
    with pytest.raises(ParseError):
        parse_response(text, "i1")


def test_mock_is_deterministic():
    config = BackendConfig(mode="mock", mock_seed=3)
    prompt = render_prompt(GenerationRequest("i1", "tsp",
                                             references=seed_records("random_removal")))
    assert backend_generate(prompt, config) == backend_generate(prompt, config)


def test_mock_every_action_parses():
    """render -> mock -> parse is total for all six actions."""
    config = BackendConfig(mode="mock", mock_seed=1)
    seeds_d = seed_records("random_removal", "worst_removal")
    seeds_r = seed_records("greedy_insertion")
    for kind in ("tsp", "cvrp", "ovrp"):
        requests = [
            GenerationRequest("i1", kind, references=seeds_d),
            GenerationRequest("i2", kind, references=seeds_r),
            GenerationRequest("m1", kind, operator_kind="destroy", parents=[seeds_d[0]]),
            GenerationRequest("m2", kind, operator_kind="repair", parents=[seeds_r[0]]),
            GenerationRequest("c1", kind, operator_kind="destroy", parents=seeds_d),
            GenerationRequest("c2", kind, parents=[seeds_d[0], seeds_r[0]]),
        ]
        for request in requests:
            text = backend_generate(render_prompt(request), config)
            resp = parse_response(text, request.action, request.operator_kind)
            assert resp.description
            want = 2 if request.action == "c2" else 1
            assert len(resp.artifacts) == want, request.action


def test_mock_m2_jitters_one_numeric_parameter():
    config = BackendConfig(mode="mock", mock_seed=5)
    parent = seed_records("random_removal")[0]
    request = GenerationRequest("m2", "tsp", operator_kind="destroy", parents=[parent])
    text = backend_generate(render_prompt(request), config)
    resp = parse_response(text, "m2", "destroy")
    marker = opsources.parse_marker(resp.artifacts[0][1])
    assert marker is not None
    name, params = marker
    assert name == "random_removal"
    defaults = BUILTINS["random_removal"].defaults
    changed = [k for k, v in params.items() if v != defaults.get(k)]
    assert len(changed) == 1


def test_mock_artifacts_become_in_process_records():
    config = BackendConfig(mode="mock", mock_seed=9)
    request = GenerationRequest("i2", "cvrp", references=seed_records("greedy_insertion"))
    text = backend_generate(render_prompt(request), config)
    resp = parse_response(text, "i2")
    rec = record_from_artifact("repair", resp.artifacts[0][1], resp.description,
                               "gen-1", birth=5)
    assert rec.provenance == "generated"
    assert isinstance(rec.impl, BuiltinImpl)
    assert rec.source


def test_gateway_transcript_and_salt(tmp_path):
    path = tmp_path / "transcript.jsonl"
    gateway = CodegenGateway(BackendConfig(mode="mock", mock_seed=2),
                             transcript_path=path)
    request = GenerationRequest("i1", "tsp", references=seed_records("random_removal"))
    a = gateway.generate(request, salt=1)
    b = gateway.generate(request, salt=2)
    c = gateway.generate(request, salt=1)
    assert len(gateway.transcript) == 3
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == 3
    assert all(set(line) == {"ts", "action", "prompt_sha", "response", "latency_ms"}
               for line in lines)
    assert a.artifacts == c.artifacts          # same salt, same reply
    assert lines[0]["response"] != lines[1]["response"] or a.artifacts != b.artifacts


def test_remote_backend_error_after_retries():
    config = BackendConfig(mode="remote", endpoint="http://127.0.0.1:9/v1/chat",
                           retries=2, timeout=0.2)
    with pytest.raises(BackendError):
        backend_generate("hello", config)


def test_backend_env_overrides(monkeypatch):
    monkeypatch.setenv("GLNS_LLM_ENDPOINT", "http://example.test/api")
    monkeypatch.setenv("GLNS_LLM_KEY", "sekrit")
    monkeypatch.setenv("GLNS_LLM_MODEL", "some-model")
    config = BackendConfig().apply_env()
    assert config.endpoint == "http://example.test/api"
    assert config.api_key == "sekrit"
    assert config.model == "some-model"


def test_source_templates_render_and_mark():
    for name, spec in BUILTINS.items():
        source = opsources.render_source(name, dict(spec.defaults))
        marker = opsources.parse_marker(source)
        assert marker is not None, name
        assert marker[0] == name
        compile(source, "<test>", "exec")
