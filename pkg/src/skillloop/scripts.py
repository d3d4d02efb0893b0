"""Playbook generation for hermetic runs.

Given an AgentSpec and a task, these generators emit a deterministic canned
script per node: a golden script that walks the task's known-good action
sequence through the topology, plus designed-failure variants used to
exercise the oracle criteria and the evidence classifier.

Profiles:
    golden                complete the task correctly
    out_of_order          swap the last two prerequisite-ordered actions
    overrun               burn the whole turn budget on reads
    skip_auth             act without logging in (constraint violations)
    type_mismatch         hand off a payload with a mistyped field
    incompatible          one node drifts into a second tool category
    wrong_route           route to a specialist lacking the needed tools
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .bank import BankEnv, TaskSpec
from .evidence import TurnKind
from .graph import AgentSpec
from .runtime import Action, CallTool, Finish, PolicyProvider, ScriptedPolicyProvider, Send

PROFILES = (
    "golden",
    "out_of_order",
    "overrun",
    "skip_auth",
    "type_mismatch",
    "incompatible",
    "wrong_route",
)


def _worker_for(spec: AgentSpec, env: BankEnv, task: TaskSpec) -> str:
    """Node whose tool access covers the most of the task's golden tools;
    ties break lexicographically."""
    needed = {tool for tool, _ in task.golden_calls}
    scored = sorted(
        spec.graph.node_ids(),
        key=lambda n: (-len(needed & spec.node_configs[n].tool_access), n),
    )
    return scored[0]


def _path_to(spec: AgentSpec, start: str, goal: str) -> list[str]:
    """Shortest edge path (BFS, neighbors in sorted order)."""
    if start == goal:
        return [start]
    frontier = [[start]]
    seen = {start}
    while frontier:
        path = frontier.pop(0)
        for src, dst in sorted(spec.graph.edges):
            if src != path[-1] or dst in seen:
                continue
            if dst == goal:
                return path + [dst]
            seen.add(dst)
            frontier.append(path + [dst])
    raise ValueError(f"no path from {start!r} to {goal!r}")


@dataclass
class _ScriptBuilder:
    task_id: str
    counters: dict[str, int] = field(default_factory=dict)
    entries: dict[tuple, Action] = field(default_factory=dict)

    def add(self, node: str, action: Action) -> None:
        index = self.counters.get(node, 0)
        self.counters[node] = index + 1
        self.entries[(self.task_id, node, index)] = action


def _handoff_payload(spec: AgentSpec, to: str, summary: str) -> dict:
    """Payload satisfying the receiver's input contract."""
    defaults = {"text": summary, "number": 0, "boolean": True, "record": {}, "list": []}
    payload = {name: defaults[tag] for name, tag in spec.node_configs[to].contract.inputs}
    return payload or {"summary": summary}


_PROBE_ARGS = {
    "get_account": {"account_id": "A1"},
    "get_balance": {"account_id": "A1"},
    "get_application": {"app_id": "APP1"},
    "get_fx_rate": {"pair": "USD/EUR"},
    "audit_log": {"account_id": "A1"},
    "verify_identity": {"user_id": "u1", "code": "probe"},
}


def _read_probe(spec: AgentSpec, env: BankEnv, node: str) -> CallTool:
    """A harmless read the node is allowed to make (burns turns, not actions)."""
    for tool in sorted(spec.node_configs[node].tool_access):
        if tool in env.registry.tools and not env.registry.tools[tool].is_action:
            return CallTool(tool, _PROBE_ARGS.get(tool, {"account_id": "A1"}))
    return CallTool("get_balance", {"account_id": "A1"})


def _walk(builder: _ScriptBuilder, spec: AgentSpec, path: Sequence[str], summary: str) -> None:
    """Emit routing hops along a path, stopping before the last node acts."""
    for here, there in zip(path, path[1:]):
        builder.add(here, Send(((there, _handoff_payload(spec, there, summary)),), TurnKind.ROUTE))


def build_task_script(
    spec: AgentSpec,
    env: BankEnv,
    task: TaskSpec,
    profile: str = "golden",
) -> dict[tuple, Action]:
    """Scripted actions for one task over one topology."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    builder = _ScriptBuilder(task.task_id)
    worker = _worker_for(spec, env, task)
    calls = list(task.golden_calls)

    if profile == "out_of_order" and len(calls) >= 2:
        calls[-1], calls[-2] = calls[-2], calls[-1]
    if profile == "skip_auth":
        calls = [c for c in calls if c[0] != "login"]
    if profile in ("type_mismatch", "incompatible") and len(calls) >= 2:
        # Leave the task unfinished so the episode actually fails.
        calls = calls[:-1]

    if profile == "overrun":
        # Entry pushes work to the worker, which then reads forever.
        if worker != spec.entry:
            _walk(builder, spec, _path_to(spec, spec.entry, worker), task.goal)
        probe = _read_probe(spec, env, worker)
        for _ in range(task.turn_limit + 2):
            builder.add(worker, probe)
        return builder.entries

    if profile == "wrong_route":
        # Send the task to the sorted-first non-worker neighbor of the entry,
        # which then attempts the needed tool without having it.
        first_action = next((c for c in calls if c[0] != "login"), calls[0])
        neighbors = sorted(
            dst for src, dst in spec.graph.edges if src == spec.entry and dst != worker
        )
        if neighbors:
            victim = neighbors[0]
            builder.add(
                spec.entry,
                Send(((victim, _handoff_payload(spec, victim, task.goal)),), TurnKind.ROUTE),
            )
        else:
            # Degenerate topologies have nowhere to misroute; fail by acting
            # out of order instead.
            victim = worker
            if worker != spec.entry:
                _walk(builder, spec, _path_to(spec, spec.entry, worker), task.goal)
        builder.add(victim, CallTool(first_action[0], first_action[1]))
        builder.add(victim, Finish({"status": "gave-up"}))
        return builder.entries

    if worker != spec.entry:
        _walk(builder, spec, _path_to(spec, spec.entry, worker), task.goal)

    for tool, args in calls:
        builder.add(worker, CallTool(tool, args))

    if profile == "incompatible":
        # The worker drifts into a second category and never closes out.
        off_category = "get_fx_rate" if task.category != "currency" else "get_balance"
        off_args = {"pair": "USD/EUR"} if off_category == "get_fx_rate" else {"account_id": "A1"}
        builder.add(worker, CallTool(off_category, off_args))

    if worker == spec.exit:
        builder.add(worker, Finish({"status": "done", "task": task.task_id}))
        return builder.entries

    exit_path = _path_to(spec, worker, spec.exit)
    summary = f"completed {task.task_id}"
    payload = _handoff_payload(spec, exit_path[1], summary)
    if profile == "type_mismatch":
        # Flip the first boolean field to text; fall back to breaking the
        # first typed field if the contract has no boolean.
        broke = False
        for name, tag in spec.node_configs[exit_path[1]].contract.inputs:
            if tag == "boolean":
                payload[name] = "yes"
                broke = True
                break
        if not broke and spec.node_configs[exit_path[1]].contract.inputs:
            name, _ = spec.node_configs[exit_path[1]].contract.inputs[0]
            payload[name] = 0
    builder.add(worker, Send(((exit_path[1], payload),), TurnKind.RESPOND))
    if profile == "type_mismatch":
        # The bounced message re-activates the worker; close out gracefully.
        builder.add(worker, Finish({"status": "gave-up", "task": task.task_id}))
    for here, there in zip(exit_path[1:], exit_path[2:]):
        builder.add(here, Send(((there, _handoff_payload(spec, there, summary)),), TurnKind.ROUTE))
    builder.add(spec.exit, Finish({"status": "done", "task": task.task_id}))
    return builder.entries


@dataclass
class ProfiledScriptProvider:
    """PolicyProvider that generates per-task playbooks lazily from a
    task_id -> profile map (default profile for unlisted tasks)."""

    env: BankEnv
    profiles: Mapping[str, str] = field(default_factory=dict)
    default_profile: str = "golden"

    def policies(self, spec: AgentSpec):
        playbook: dict[tuple, Action] = {}
        for task in self.env.tasks:
            profile = self.profiles.get(task.task_id, self.default_profile)
            playbook.update(build_task_script(spec, self.env, task, profile))
        return ScriptedPolicyProvider(playbook, exhaustion="fault").policies(spec)
