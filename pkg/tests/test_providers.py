from __future__ import annotations

import json

import pytest

from skillloop.providers import (
    CompletionRequest,
    DefaultEmbedder,
    ProviderError,
    ScriptedPolicy,
    ScriptedProvider,
    UsageRecord,
    load_playbook,
)


def req(key=None):
    return CompletionRequest(model="m", system="s", messages=(("user", "hello"),), key=key)


# ---------------------------------------------------------------------------
# usage accounting
# ---------------------------------------------------------------------------


def test_usage_merge_is_componentwise():
    merged = UsageRecord(100, 50, 1, 5).merge(UsageRecord(20, 5, 1, 3))
    assert merged == UsageRecord(120, 55, 2, 8)


def test_usage_merge_is_associative_and_commutative():
    a, b, c = UsageRecord(1, 2, 1, 4), UsageRecord(10, 20, 2, 40), UsageRecord(7, 0, 1, 1)
    assert a.merge(b) == b.merge(a)
    assert a.merge(b).merge(c) == a.merge(b.merge(c))


def test_usage_rejects_negative_values():
    with pytest.raises(ValueError):
        UsageRecord(prompt_tokens=-1)


def test_completion_request_invariants():
    with pytest.raises(ValueError):
        CompletionRequest(model="m", system="s", messages=())
    with pytest.raises(ValueError):
        CompletionRequest(model="m", system="s", messages=(("user", "x"),), temperature=3.0)


# ---------------------------------------------------------------------------
# scripted provider
# ---------------------------------------------------------------------------


def test_scripted_provider_plays_keyed_entry():
    provider = ScriptedProvider({("node-a", 0): "canned reply"})
    text, usage = provider.complete(req(key=("node-a", 0)))
    assert text == "canned reply"
    assert usage == UsageRecord(0, 0, 1, 0)


def test_scripted_provider_is_deterministic():
    provider = ScriptedProvider({("node-a", 0): "same"})
    first = provider.complete(req(key=("node-a", 0)))
    second = provider.complete(req(key=("node-a", 0)))
    assert first == second


def test_scripted_provider_exhaustion_fault():
    provider = ScriptedProvider({("node-a", 0): "only one"})
    with pytest.raises(ProviderError):
        provider.complete(req(key=("node-a", 5)))


def test_scripted_provider_repeat_last():
    provider = ScriptedProvider(
        {("node-a", 0): "first", ("node-a", 3): "latest"}, exhaustion="repeat_last"
    )
    text, _ = provider.complete(req(key=("node-a", 9)))
    assert text == "latest"


# ---------------------------------------------------------------------------
# scripted policy playback
# ---------------------------------------------------------------------------


def test_scripted_policy_prefers_task_scoped_key():
    policy = ScriptedPolicy({("t1", "n", 0): "scoped", ("n", 0): "fallback"})
    assert policy.lookup("t1", "n", 0) == "scoped"
    assert policy.lookup("t2", "n", 0) == "fallback"


def test_scripted_policy_exhaustion_modes():
    strict = ScriptedPolicy({("n", 0): "a"})
    with pytest.raises(ProviderError):
        strict.lookup("t", "n", 1)
    lenient = ScriptedPolicy({("n", 0): "a", ("n", 2): "b"}, exhaustion="repeat_last")
    assert lenient.lookup("t", "n", 7) == "b"


def test_playbook_file_round_trip(tmp_path):
    payload = {
        "entries": [
            {"task": "bank-001", "node": "worker", "activation": 0,
             "action": {"tool": "login", "args": {"user_id": "u1", "pin": "1111"}}},
            {"node": "worker", "activation": 1, "action": {"finish": {"ok": True}}},
        ]
    }
    path = tmp_path / "playbook.json"
    path.write_text(json.dumps(payload))
    playbook = load_playbook(path)
    assert playbook[("bank-001", "worker", 0)] == {"tool": "login", "args": {"user_id": "u1", "pin": "1111"}}
    assert playbook[("worker", 1)] == {"finish": {"ok": True}}


def test_playbook_actions_decode_in_the_runtime():
    from skillloop.runtime import CallTool, Finish, Send, decode_action
    from skillloop.evidence import TurnKind

    assert decode_action({"tool": "login", "args": {"pin": "1"}}) == CallTool("login", {"pin": "1"})
    send = decode_action({"send": [["sink", {"ok": True}]], "kind": "respond"})
    assert isinstance(send, Send) and send.kind is TurnKind.RESPOND
    assert decode_action({"finish": {"x": 1}}) == Finish({"x": 1})
    with pytest.raises(ValueError):
        decode_action({"noop": True})


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


def test_default_embedder_same_text_same_vector():
    embedder = DefaultEmbedder()
    a, b = embedder.embed(["Router, Verifier", "Router, Verifier"])
    assert a == b


def test_default_embedder_vectors_are_unit_norm():
    for vector in DefaultEmbedder().embed(["Router", "Analyzer, Checker", "FooWidget"]):
        assert sum(x * x for x in vector) == pytest.approx(1.0, abs=1e-9)


def test_default_embedder_collapses_synonym_role_sets():
    embedder = DefaultEmbedder()
    a, b = embedder.embed(["Analyzer, Verifier", "Examiner, Checker"])
    assert a == b


def test_embed_empty_input_errors():
    with pytest.raises(ValueError):
        DefaultEmbedder().embed([])
