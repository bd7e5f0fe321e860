import json

import httpx
import pytest

from coevolve.dsl import parse, to_text
from coevolve.envs import ENV_NAMES, env_interface, get_spec
from coevolve.llm import (
    BackendUnavailable,
    HttpBackend,
    MissingFeedback,
    MockBackend,
    PromptContext,
    build_feedback_prompt,
    build_initial_prompt,
    build_prompt,
    extract_program,
    generate_candidates,
)
from coevolve.llm.generator import TEMPLATE_POOLS, template_pool

ROT = get_spec("rotator")
BEST = parse("""
component orientation_diff { temp = 0.1 expr = rot_dist weight = 4.0 }
component angvel_penalty { temp = 0.1 expr = angvel_abs weight = -2.0 }
""")


def _stats(names, n=10):
    s = {"snapshots": [0.1 * i for i in range(n)], "max": 0.9, "mean": 0.45, "min": 0.0}
    return {"components": {k: s for k in names}, "task_score": s, "episode_lengths": s}


def _ctx(best=None, stats=None, spec=ROT):
    return PromptContext(spec.task_description, env_interface(spec), best, stats)


def _reply(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


GOOD = "Here you go:\n```reward\ncomponent c { temp = 0.5 expr = rot_dist weight = 1.0 }\n```\n"


# prompts ---------------------------------------------------------------------------------

def test_initial_prompt_contents():
    p = build_initial_prompt(_ctx())
    assert p.startswith("You are a reward engineer")
    for name in ROT.feature_names:
        assert name in p
    assert env_interface(ROT) in p
    assert "temperature" in p and "component" in p
    assert p == build_initial_prompt(_ctx())


def test_feedback_prompt_contents():
    p = build_feedback_prompt(_ctx(BEST, _stats(BEST.names)))
    assert to_text(BEST) in p
    line = "orientation_diff: ['0.00', '0.10', '0.20', '0.30', '0.40', '0.50', '0.60', '0.70', '0.80', '0.90']"
    assert line + ", Max: 0.90, Mean: 0.45, Min: 0.00" in p
    assert "task_score: [" in p and "episode_lengths: [" in p
    assert "If the success rates are always near zero" in p
    assert p == build_feedback_prompt(_ctx(BEST, _stats(BEST.names)))


def test_feedback_prompt_handles_missing_series():
    stats = _stats(BEST.names)
    stats["task_score"] = None
    assert "task_score: no completed episodes" in build_feedback_prompt(_ctx(BEST, stats))


def test_feedback_needs_program_and_stats():
    with pytest.raises(MissingFeedback):
        build_feedback_prompt(_ctx(BEST, None))
    assert build_prompt(_ctx()) == build_initial_prompt(_ctx())


def test_fenced_program_in_feedback_prompt_reparses():
    p = build_feedback_prompt(_ctx(BEST, _stats(BEST.names)))
    assert extract_program(p) == BEST


# mock backend ----------------------------------------------------------------------------

@pytest.mark.parametrize("name", ENV_NAMES)
def test_template_pools_valid(name):
    spec = get_spec(name)
    for comp in template_pool(name):
        assert comp.expr is not None
    parse(TEMPLATE_POOLS[name]).check_features(spec.feature_names)


def test_rotator_pool_has_feedback_components():
    names = {c.name for c in template_pool("rotator")}
    assert {"orientation_diff", "angvel_penalty", "orientation_diff_decrease"} <= names


def test_mock_deterministic_and_sized():
    be = MockBackend.for_env(ROT, seed=3)
    a = generate_candidates(_ctx(), 6, be, (3, "gen", 1, 0), ROT.feature_names)
    b = generate_candidates(_ctx(), 6, be, (3, "gen", 1, 0), ROT.feature_names)
    assert len(a) == 6
    assert [c.program for c in a] == [c.program for c in b]
    assert [c.index for c in a] == list(range(6))


def test_mock_feedback_round_mutates_best():
    be = MockBackend.for_env(ROT, seed=1)
    cands = generate_candidates(_ctx(BEST, _stats(BEST.names)), 6, be, (1, "gen", 2, 0), ROT.feature_names)
    for c in cands:
        assert c.program != BEST
        c.program.check_features(ROT.feature_names)


def test_mock_needs_pools():
    with pytest.raises(ValueError):
        MockBackend(0, (), template_pool("rotator"))


# http backend ----------------------------------------------------------------------------

def _http(handler, **kw):
    kw.setdefault("fallback", MockBackend.for_env(ROT, 0))
    return HttpBackend("http://llm.test/v1/chat/completions", "test-model",
                       transport=httpx.MockTransport(handler), **kw)


def test_http_wire_format(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "sekret")
    seen = []

    def handler(request):
        seen.append((dict(request.headers), json.loads(request.content)))
        return httpx.Response(200, json=_reply(GOOD))

    cands = generate_candidates(_ctx(), 3, _http(handler, api_key_env_var="TEST_LLM_KEY", temperature=0.7),
                                (0, "gen", 1, 0), ROT.feature_names)
    assert [c.fallback for c in cands] == [False] * 3
    assert all(c.program == parse("component c { temp = 0.5 expr = rot_dist weight = 1.0 }") for c in cands)
    headers, body = seen[0]
    assert headers["authorization"] == "Bearer sekret"
    assert body["model"] == "test-model" and body["temperature"] == 0.7
    assert body["messages"][0]["role"] == "user"
    assert body["messages"][0]["content"] == build_initial_prompt(_ctx())
    assert len(seen) == 3


def test_http_retries_then_succeeds():
    replies = iter(["no code here", "```reward\ncomponent c { temp = 0 expr = x weight = 1 }\n```", GOOD])

    def handler(request):
        return httpx.Response(200, json=_reply(next(replies)))

    (c,) = generate_candidates(_ctx(), 1, _http(handler, max_retries=3), 0, ROT.feature_names)
    assert not c.fallback
    assert len(c.responses) == 3 and len(c.errors) == 2


def test_http_unknown_feature_is_regenerated():
    replies = iter(["```reward\ncomponent c { temp = 1 expr = speed weight = 1 }\n```", GOOD])

    def handler(request):
        return httpx.Response(200, json=_reply(next(replies)))

    (c,) = generate_candidates(_ctx(), 1, _http(handler), 0, ROT.feature_names)
    assert not c.fallback and c.program.features() == {"rot_dist"}


def test_http_fallback_flagged():
    def handler(request):
        return httpx.Response(200, json=_reply("sorry, I cannot help"))

    cands = generate_candidates(_ctx(), 2, _http(handler, max_retries=2), 0, ROT.feature_names)
    assert all(c.fallback for c in cands)
    for c in cands:
        c.program.check_features(ROT.feature_names)
        assert len(c.responses) == 3


def test_http_unreachable_without_fallback():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    be = _http(handler, max_retries=1, fallback_to_mock=False)
    with pytest.raises(BackendUnavailable):
        generate_candidates(_ctx(), 2, be, 0, ROT.feature_names)


def test_http_server_error_then_ok():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] == 1:
            return httpx.Response(500, text="overloaded")
        return httpx.Response(200, json=_reply(GOOD))

    (c,) = generate_candidates(_ctx(), 1, _http(handler), 0, ROT.feature_names)
    assert not c.fallback and calls["n"] == 2


def test_http_needs_endpoint():
    with pytest.raises(ValueError):
        HttpBackend("", "m")
