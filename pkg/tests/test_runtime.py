from __future__ import annotations

import pytest

from skillloop.bank import evaluate_oracle
from skillloop.doc import ContractSpec
from skillloop.evidence import FaultCategory, TurnKind, trace_to_lines
from skillloop.graph import AgentSpec, FunctionalType, NodeConfig, make_graph, spec_from_json_dict
from skillloop.runtime import (
    BuildError,
    CallTool,
    Finish,
    Message,
    RunBudget,
    ScriptedPolicyProvider,
    Send,
    build_system,
    run_task,
    validate_contract,
)
from skillloop.scripts import ProfiledScriptProvider, build_task_script

F = FunctionalType


def two_node_spec(contract=None):
    graph = make_graph(
        [("entry", "EntryNode", F.ROUTER), ("worker", "WorkerNode", F.EXECUTOR)],
        {("entry", "worker"), ("worker", "entry")},
    )
    configs = {
        "entry": NodeConfig("route", frozenset(), ContractSpec()),
        "worker": NodeConfig(
            "work", frozenset({"login", "deposit", "get_balance"}), contract or ContractSpec()
        ),
    }
    return AgentSpec(graph, configs, (), "entry", "worker")


def test_build_validates_tools_and_structure(env):
    spec = two_node_spec()
    system = build_system(spec, ScriptedPolicyProvider({}), env)
    assert set(system.node_policies) == {"entry", "worker"}

    bad = AgentSpec(
        spec.graph,
        {
            "entry": NodeConfig("", frozenset({"teleport"}), ContractSpec()),
            "worker": NodeConfig("", frozenset(), ContractSpec()),
        },
        (),
        "entry",
        "worker",
    )
    with pytest.raises(BuildError, match="teleport"):
        build_system(bad, ScriptedPolicyProvider({}), env)


def test_build_error_names_missing_routing_target(env):
    data = two_node_spec().to_json_dict()
    data["routing_rules"] = [["always", "X"]]
    spec = spec_from_json_dict(data)
    with pytest.raises(BuildError, match="'X'"):
        build_system(spec, ScriptedPolicyProvider({}), env)


def test_build_six_role_eight_edge_ensemble(env):
    names = ["hub"] + [f"s{i}" for i in range(4)] + ["sink"]
    nodes = [("hub", "Dispatcher", F.ROUTER)]
    nodes += [(f"s{i}", f"Spec{i}", F.SPECIALIST) for i in range(4)]
    nodes += [("sink", "Collector", F.AGGREGATOR)]
    edges = {("hub", f"s{i}") for i in range(4)} | {(f"s{i}", "sink") for i in range(4)}
    graph = make_graph(nodes, edges)
    spec = AgentSpec(
        graph,
        {n: NodeConfig("", frozenset(), ContractSpec()) for n in names},
        (),
        "hub",
        "sink",
    )
    system = build_system(spec, ScriptedPolicyProvider({}), env)
    assert len(system.spec.graph.nodes) == 6
    assert len(system.spec.graph.edges) == 8


# ---------------------------------------------------------------------------
# contract validation
# ---------------------------------------------------------------------------

AMOUNT_CONTRACT = ContractSpec(inputs=(("amount", "number"),))


def msg(payload, contract=AMOUNT_CONTRACT):
    return Message("a", "b", payload, contract)


def test_contract_ok():
    assert validate_contract(msg({"amount": 25})) is None


def test_contract_missing_field():
    fault = validate_contract(msg({}))
    assert fault.category is FaultCategory.MALFORMED_MESSAGE
    assert fault.field == "amount"


def test_contract_type_mismatch():
    fault = validate_contract(msg({"amount": "a lot"}))
    assert fault.category is FaultCategory.TYPE_MISMATCH
    assert fault.field == "amount"


def test_contract_booleans_are_not_numbers():
    fault = validate_contract(msg({"amount": True}))
    assert fault.category is FaultCategory.TYPE_MISMATCH


# ---------------------------------------------------------------------------
# episode execution
# ---------------------------------------------------------------------------


def test_golden_episode_passes_and_respects_budgets(env, ensemble_spec):
    task = env.task("bank-006")
    playbook = build_task_script(ensemble_spec, env, task, "golden")
    system = build_system(ensemble_spec, ScriptedPolicyProvider(playbook), env)
    trace, final = run_task(system, task, RunBudget())
    verdict = evaluate_oracle(env, task, trace, final)
    assert verdict.passed
    assert len(trace.turns) <= 20
    assert trace.budget_usage.actions <= 10
    assert trace.budget_usage.turns == len(trace.turns)


def test_route_loop_truncates_at_exactly_twenty_turns(env):
    spec = two_node_spec()
    playbook = {}
    for i in range(15):
        playbook[("entry", i)] = Send((("worker", {}),), TurnKind.ROUTE)
        playbook[("worker", i)] = Send((("entry", {}),), TurnKind.ROUTE)
    task = env.task("bank-001")
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    trace, _ = run_task(system, task, RunBudget(turn_limit=20))
    assert len(trace.turns) == 20
    last = trace.turns[-1]
    assert last.kind is TurnKind.FAULT
    assert last.fault.category is FaultCategory.BUDGET_EXHAUSTED


def test_finish_on_the_final_slot_is_allowed(env):
    spec = two_node_spec()
    playbook = {("entry", 0): Finish({"done": True})}
    task = env.task("bank-001")
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    trace, _ = run_task(system, task, RunBudget(turn_limit=1))
    assert len(trace.turns) == 1
    assert trace.turns[0].kind is TurnKind.RESPOND


def test_action_budget_halts_episode(env):
    spec = two_node_spec()
    playbook = {("worker", i): CallTool("deposit", {"account_id": "A1", "amount": 1}) for i in range(6)}
    playbook[("entry", 0)] = Send((("worker", {}),), TurnKind.ROUTE)
    task = env.task("bank-001")
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    trace, _ = run_task(system, task, RunBudget(action_limit=3))
    assert trace.budget_usage.actions == 3
    assert trace.turns[-1].fault.category is FaultCategory.BUDGET_EXHAUSTED
    assert "action budget" in trace.turns[-1].fault.detail


def test_contract_violation_faults_bounce_once_then_continue(env):
    contract = ContractSpec(inputs=(("amount", "number"),))
    spec = two_node_spec(contract)
    playbook = {
        # first send violates the contract; the bounce re-activates the
        # sender, which recovers and finishes
        ("entry", 0): Send((("worker", {"amount": "wrong"}),), TurnKind.ROUTE),
        ("entry", 1): Finish({"recovered": True}),
    }
    task = env.task("bank-001")
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    trace, _ = run_task(system, task, RunBudget())
    kinds = [t.kind for t in trace.turns]
    assert kinds == [TurnKind.FAULT, TurnKind.RESPOND]
    assert trace.turns[0].fault.category is FaultCategory.TYPE_MISMATCH
    assert trace.turns[0].fault.field == "amount"


def test_second_contract_violation_does_not_bounce(env):
    contract = ContractSpec(inputs=(("amount", "number"),))
    spec = two_node_spec(contract)
    playbook = {
        ("entry", 0): Send((("worker", {"amount": "wrong"}),), TurnKind.ROUTE),
        ("entry", 1): Send((("worker", {"amount": "wrong again"}),), TurnKind.ROUTE),
        ("entry", 2): Finish({"never": "reached"}),
    }
    task = env.task("bank-001")
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    trace, _ = run_task(system, task, RunBudget())
    # one bounce only: two faults, then nothing pending, episode over
    assert [t.kind for t in trace.turns] == [TurnKind.FAULT, TurnKind.FAULT]


def test_disallowed_tool_becomes_fault_turn(env):
    spec = two_node_spec()
    playbook = {
        ("entry", 0): Send((("worker", {}),), TurnKind.ROUTE),
        ("worker", 0): CallTool("approve_credit", {"app_id": "APP1"}),
        ("worker", 1): Finish({}),
    }
    task = env.task("bank-001")
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    trace, _ = run_task(system, task, RunBudget())
    faults = [t for t in trace.turns if t.kind is TurnKind.FAULT]
    assert len(faults) == 1
    assert faults[0].fault.category is FaultCategory.TOOL_ERROR
    assert "not permitted" in faults[0].fault.detail


def test_messages_travel_only_along_spec_edges(env, ensemble_spec):
    profiles = {"bank-010": "overrun", "bank-006": "out_of_order"}
    system = build_system(ensemble_spec, ProfiledScriptProvider(env, profiles), env)
    edges = ensemble_spec.graph.edges
    for task in env.tasks:
        trace, _ = run_task(system, task, RunBudget())
        for turn in trace.turns:
            if turn.kind in (TurnKind.ROUTE, TurnKind.AGGREGATE) and turn.message:
                for target in turn.message.get("to", ()):
                    assert (turn.node, target) in edges


def test_send_along_non_edge_is_a_programming_error(env):
    spec = two_node_spec()
    playbook = {("entry", 0): Send((("entry", {}),), TurnKind.ROUTE)}
    task = env.task("bank-001")
    # entry -> entry is not an edge (self-loops are impossible by construction)
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    with pytest.raises(BuildError, match="non-edge"):
        run_task(system, task, RunBudget())


def test_scripted_runs_are_byte_deterministic(env, ensemble_spec):
    profiles = {"bank-002": "skip_auth", "bank-010": "overrun"}

    def run_once():
        system = build_system(ensemble_spec, ProfiledScriptProvider(env, profiles), env)
        lines = []
        for task in env.tasks:
            trace, final = run_task(system, task, RunBudget(), trace_id=f"d-{task.task_id}")
            trace = trace.with_outcome(evaluate_oracle(env, task, trace, final))
            lines.extend(trace_to_lines(trace))
        return "\n".join(lines)

    assert run_once() == run_once()


def test_fanout_turns_commit_in_node_id_order(env):
    graph = make_graph(
        [
            ("hub", "Hub", F.ROUTER),
            ("b_node", "B", F.SPECIALIST),
            ("a_node", "A", F.SPECIALIST),
            ("sink", "Sink", F.AGGREGATOR),
        ],
        {("hub", "a_node"), ("hub", "b_node"), ("a_node", "sink"), ("b_node", "sink")},
    )
    spec = AgentSpec(
        graph,
        {
            n: NodeConfig("", frozenset({"get_balance"}), ContractSpec())
            for n in ("hub", "a_node", "b_node", "sink")
        },
        (),
        "hub",
        "sink",
    )
    playbook = {
        ("hub", 0): Send((("b_node", {}), ("a_node", {})), TurnKind.ROUTE),
        ("a_node", 0): CallTool("get_balance", {"account_id": "A1"}),
        ("a_node", 1): Send((("sink", {}),), TurnKind.RESPOND),
        ("b_node", 0): CallTool("get_balance", {"account_id": "A2"}),
        ("b_node", 1): Send((("sink", {}),), TurnKind.RESPOND),
        ("sink", 0): Finish({}),
    }
    task = env.task("bank-001")
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    trace, _ = run_task(system, task, RunBudget())
    # a_node activates before b_node despite being listed second in the Send
    order = [t.node for t in trace.turns]
    assert order.index("a_node") < order.index("b_node")


def test_policy_exhaustion_is_encoded_in_the_trace(env):
    spec = two_node_spec()
    playbook = {("entry", 0): Send((("worker", {}),), TurnKind.ROUTE)}
    task = env.task("bank-001")
    system = build_system(spec, ScriptedPolicyProvider(playbook), env)
    trace, _ = run_task(system, task, RunBudget())
    assert trace.turns[-1].kind is TurnKind.FAULT
    assert "exhausted" in trace.turns[-1].fault.detail


# ---------------------------------------------------------------------------
# live-policy action grammar
# ---------------------------------------------------------------------------


def test_llm_policy_parses_the_action_grammar():
    from skillloop.runtime import LlmPolicy

    tool = LlmPolicy._parse('TOOL deposit {"account_id": "A1", "amount": 5}')
    assert tool == CallTool("deposit", {"account_id": "A1", "amount": 5})
    send = LlmPolicy._parse('SEND sink {"summary": "done"}')
    assert isinstance(send, Send)
    assert send.targets == (("sink", {"summary": "done"}),)
    finish = LlmPolicy._parse('FINISH {"ok": true}')
    assert finish == Finish({"ok": True})
    fallback = LlmPolicy._parse("I will now think out loud instead")
    assert isinstance(fallback, Finish)


def test_llm_policy_acts_through_a_scripted_provider(env):
    from skillloop.providers import ScriptedProvider
    from skillloop.runtime import LlmPolicy, PolicyContext

    provider = ScriptedProvider({("worker", 0): 'TOOL login {"user_id": "u1", "pin": "1111"}'})
    policy = LlmPolicy(provider)
    ctx = PolicyContext("bank-001", "worker", 0, None, frozenset({"login"}))
    action, usage = policy.act(ctx)
    assert action == CallTool("login", {"user_id": "u1", "pin": "1111"})
    assert usage.calls == 1
