"""Graph factory and message-passing executor.

Builds a runnable system out of an AgentSpec, then drives tasks through it
under hard budgets.  Every node activation costs exactly one turn whether or
not it calls a tool, so routing and aggregation overhead is visible in the
trace; task-level failures never raise, they land in the trace where the
analysis phase can see them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

from .bank import BankEnv, TaskSpec, WorldState, execute_call
from .doc import ContractSpec
from .evidence import (
    BudgetUsage,
    ExecutionTrace,
    FaultCategory,
    FaultRecord,
    ToolCallRecord,
    Turn,
    TurnKind,
)
from .graph import AgentSpec, SpecValidationError
from .providers import CompletionProvider, ProviderError, ScriptedPolicy, UsageRecord

logger = logging.getLogger(__name__)


class BuildError(SpecValidationError):
    """AgentSpec could not be turned into a runnable system."""


@dataclass(frozen=True)
class RunBudget:
    """Per-episode limits, enforced in priority order turn -> action ->
    token -> wall clock."""

    turn_limit: int = 20
    action_limit: int = 10
    token_limit: int = 50_000
    wall_clock_limit_ms: int = 300_000

    def __post_init__(self):
        for name in ("turn_limit", "action_limit", "token_limit", "wall_clock_limit_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class Message:
    sender: str
    recipient: str
    payload: Mapping
    contract: ContractSpec | None = None


# -- policy actions ----------------------------------------------------------


@dataclass(frozen=True)
class CallTool:
    tool: str
    args: Mapping


@dataclass(frozen=True)
class Send:
    targets: tuple[tuple[str, Mapping], ...]
    kind: TurnKind = TurnKind.ROUTE  # route | respond | aggregate


@dataclass(frozen=True)
class Finish:
    payload: Mapping


Action = CallTool | Send | Finish


@dataclass(frozen=True)
class PolicyContext:
    task_id: str
    node_id: str
    activation: int
    inbox: Message | None
    tools: frozenset[str]


class Policy(Protocol):
    def act(self, ctx: PolicyContext) -> tuple[Action, UsageRecord]: ...


class PolicyProvider(Protocol):
    def policies(self, spec: AgentSpec) -> Mapping[str, Policy]: ...


@dataclass
class PlaybackPolicy:
    """Adapts a ScriptedPolicy playbook (Action values) to the Policy seam."""

    script: ScriptedPolicy

    def act(self, ctx: PolicyContext) -> tuple[Action, UsageRecord]:
        action = self.script.lookup(ctx.task_id, ctx.node_id, ctx.activation)
        if not isinstance(action, (CallTool, Send, Finish)):
            action = decode_action(action)
        return action, UsageRecord()


def decode_action(data: Mapping) -> Action:
    """Decode a playback-file action dict."""
    if "tool" in data:
        return CallTool(data["tool"], data.get("args", {}))
    if "send" in data:
        kind = TurnKind(data.get("kind", "route"))
        return Send(tuple((to, payload) for to, payload in data["send"]), kind)
    if "finish" in data:
        return Finish(data["finish"])
    raise ValueError(f"unrecognized scripted action {data!r}")


@dataclass
class ScriptedPolicyProvider:
    playbook: Mapping[tuple, object]
    exhaustion: str = "fault"

    def policies(self, spec: AgentSpec) -> Mapping[str, "Policy"]:
        shared = PlaybackPolicy(ScriptedPolicy(self.playbook, self.exhaustion))
        return {node_id: shared for node_id in spec.graph.node_ids()}


@dataclass
class LlmPolicy:
    """Completion-provider-backed node policy for live runs.

    The node replies in a one-line action grammar:
    ``TOOL <name> <json args>`` | ``SEND <node> <json payload>`` |
    ``FINISH <json payload>``.  Anything unparseable finishes the episode
    with the raw text, so a confused model cannot wedge the loop.
    """

    provider: "CompletionProvider"
    model: str = "backbone"

    def act(self, ctx: PolicyContext) -> tuple[Action, UsageRecord]:
        import json

        from .providers import CompletionRequest

        inbox = dict(ctx.inbox.payload) if ctx.inbox is not None else {}
        system = (
            "You are one node of a multi-agent system. Reply with exactly one line:\n"
            "TOOL <name> <json args> | SEND <node> <json payload> | FINISH <json payload>\n"
            f"Tools available to you: {', '.join(sorted(ctx.tools)) or 'none'}."
        )
        request = CompletionRequest(
            model=self.model,
            system=system,
            messages=(("user", json.dumps({"task": ctx.task_id, "inbox": inbox}, sort_keys=True)),),
            key=(ctx.node_id, ctx.activation),
        )
        text, usage = self.provider.complete(request)
        return self._parse(text), usage

    @staticmethod
    def _parse(text: str) -> Action:
        import json

        line = text.strip().splitlines()[0] if text.strip() else ""
        head, _, rest = line.partition(" ")
        try:
            if head == "TOOL":
                name, _, raw = rest.partition(" ")
                return CallTool(name, json.loads(raw or "{}"))
            if head == "SEND":
                target, _, raw = rest.partition(" ")
                return Send(((target, json.loads(raw or "{}")),), TurnKind.ROUTE)
            if head == "FINISH":
                return Finish(json.loads(rest or "{}"))
        except json.JSONDecodeError:
            pass
        return Finish({"text": text})


@dataclass
class LlmPolicyProvider:
    provider: "CompletionProvider"
    model: str = "backbone"

    def policies(self, spec: AgentSpec) -> Mapping[str, Policy]:
        shared = LlmPolicy(self.provider, self.model)
        return {node_id: shared for node_id in spec.graph.node_ids()}


Clock = Callable[[], int]


def zero_clock() -> int:
    """Deterministic clock for hermetic runs; wall time reads as 0 ms."""
    return 0


def monotonic_clock() -> int:
    import time

    return int(time.monotonic() * 1000)


@dataclass
class RunnableSystem:
    spec: AgentSpec
    node_policies: Mapping[str, Policy]
    env: BankEnv

    def __post_init__(self):
        ids = set(self.spec.graph.node_ids())
        if set(self.node_policies) != ids:
            raise BuildError("policy bindings do not cover the spec's nodes")


def build_system(spec: AgentSpec, policies: PolicyProvider, env: BankEnv) -> RunnableSystem:
    """Validate the spec against the environment's tool registry and bind a
    policy to every node."""
    try:
        spec.validate(env.registry.names())
    except SpecValidationError as exc:
        raise BuildError(str(exc)) from None
    return RunnableSystem(spec, dict(policies.policies(spec)), env)


def validate_contract(msg: Message) -> FaultRecord | None:
    """None when every required field is present with a matching semantic
    type; otherwise a fault naming the first offending field (contract
    order)."""
    if msg.contract is None:
        return None
    checks = {
        "text": lambda v: isinstance(v, str),
        "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "boolean": lambda v: isinstance(v, bool),
        "record": lambda v: isinstance(v, dict),
        "list": lambda v: isinstance(v, list),
    }
    for name, tag in msg.contract.inputs:
        if name not in msg.payload:
            return FaultRecord(
                FaultCategory.MALFORMED_MESSAGE,
                f"message {msg.sender} -> {msg.recipient} missing required field '{name}'",
                field=name,
            )
        if not checks[tag](msg.payload[name]):
            return FaultRecord(
                FaultCategory.TYPE_MISMATCH,
                f"field '{name}' in message {msg.sender} -> {msg.recipient} must be {tag}",
                field=name,
            )
    return None


@dataclass
class _Activation:
    node: str
    inbox: Message | None


def run_task(
    system: RunnableSystem,
    task: TaskSpec,
    budget: RunBudget,
    trace_id: str | None = None,
    clock: Clock = zero_clock,
) -> tuple[ExecutionTrace, WorldState]:
    """Execute one episode.

    One activation = one turn.  The final turn slot only admits a terminal
    Finish; any other pending work becomes a budget_exhausted fault so the
    trace never exceeds the limit and always records why it stopped.
    Contract violations fault the sender's turn and bounce once.
    """
    spec = system.spec
    env = system.env
    state = task.initial
    turns: list[Turn] = []
    actions_used = 0
    tokens_used = 0
    started_ms = clock()
    bounced: set[tuple[str, str]] = set()
    activation_count: dict[str, int] = {}
    queue: list[_Activation] = [
        _Activation(spec.entry, Message("environment", spec.entry, {"goal": task.goal}, None))
    ]

    def fault_turn(node: str, category: FaultCategory, detail: str, field_name: str | None = None):
        turns.append(
            Turn(
                index=len(turns),
                node=node,
                kind=TurnKind.FAULT,
                fault=FaultRecord(category, detail, field_name),
            )
        )

    while queue:
        activation = queue.pop(0)
        node = activation.node
        last_slot = len(turns) == budget.turn_limit - 1
        if len(turns) >= budget.turn_limit:
            break
        index = activation_count.get(node, 0)
        activation_count[node] = index + 1
        ctx = PolicyContext(
            task_id=task.task_id,
            node_id=node,
            activation=index,
            inbox=activation.inbox,
            tools=spec.node_configs[node].tool_access,
        )
        try:
            action, usage = system.node_policies[node].act(ctx)
        except ProviderError as exc:
            fault_turn(node, FaultCategory.TOOL_ERROR, f"policy failure: {exc}")
            break
        tokens_used += usage.total_tokens

        if last_slot and not isinstance(action, Finish):
            # Only a terminal response fits in the final turn slot; anything
            # else would generate work beyond the budget.
            fault_turn(node, FaultCategory.BUDGET_EXHAUSTED, "turn budget exhausted")
            break

        if isinstance(action, CallTool):
            if action.tool not in spec.node_configs[node].tool_access:
                fault_turn(
                    node,
                    FaultCategory.TOOL_ERROR,
                    f"tool '{action.tool}' not permitted for node '{node}'",
                )
                queue.insert(0, _Activation(node, activation.inbox))
            else:
                tool = env.registry.tools[action.tool]
                if tool.is_action and actions_used >= budget.action_limit:
                    fault_turn(node, FaultCategory.BUDGET_EXHAUSTED, "action budget exhausted")
                    break
                if tool.is_action:
                    actions_used += 1
                state, result = execute_call(env, task, state, action.tool, action.args)
                turns.append(
                    Turn(
                        index=len(turns),
                        node=node,
                        kind=TurnKind.TOOL_CALL,
                        tool_call=ToolCallRecord(action.tool, dict(action.args), result),
                    )
                )
                queue.insert(
                    0,
                    _Activation(
                        node, Message(node, node, {"tool": action.tool, "result": result}, None)
                    ),
                )
        elif isinstance(action, Send):
            targets = sorted(action.targets, key=lambda t: t[0])
            for to, _ in targets:
                if (node, to) not in spec.graph.edges:
                    raise BuildError(f"policy for '{node}' sent along a non-edge to '{to}'")
            fault = None
            for to, payload in targets:
                msg = Message(node, to, payload, spec.node_configs[to].contract)
                fault = validate_contract(msg)
                if fault is not None:
                    turns.append(Turn(index=len(turns), node=node, kind=TurnKind.FAULT, fault=fault))
                    if (node, to) not in bounced:
                        bounced.add((node, to))
                        queue.append(
                            _Activation(
                                node,
                                Message(
                                    to,
                                    node,
                                    {"bounce": fault.detail, "field": fault.field},
                                    None,
                                ),
                            )
                        )
                    break
            if fault is None:
                turns.append(
                    Turn(
                        index=len(turns),
                        node=node,
                        kind=action.kind,
                        message={"to": [t for t, _ in targets]},
                    )
                )
                for to, payload in targets:
                    queue.append(
                        _Activation(to, Message(node, to, payload, spec.node_configs[to].contract))
                    )
        elif isinstance(action, Finish):
            turns.append(
                Turn(
                    index=len(turns),
                    node=node,
                    kind=TurnKind.RESPOND,
                    message={"final": dict(action.payload)},
                )
            )
            break
        else:
            raise TypeError(f"policy returned unsupported action {action!r}")

        if tokens_used > budget.token_limit:
            if len(turns) < budget.turn_limit:
                fault_turn(node, FaultCategory.BUDGET_EXHAUSTED, "token budget exhausted")
            break
        if clock() - started_ms > budget.wall_clock_limit_ms:
            if len(turns) < budget.turn_limit:
                fault_turn(node, FaultCategory.BUDGET_EXHAUSTED, "wall clock budget exhausted")
            break

    usage = BudgetUsage(
        turns=len(turns),
        actions=actions_used,
        tokens=tokens_used,
        wall_ms=clock() - started_ms,
    )
    trace = ExecutionTrace(
        trace_id=trace_id or f"{task.task_id}-run",
        task_id=task.task_id,
        task_type=task.category,
        turns=tuple(turns),
        outcome=None,
        budget_usage=usage,
    )
    return trace, state
