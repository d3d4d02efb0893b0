"""Execution traces and contrastive evidence extraction.

Failed runs are paired with successful runs of the same task type and
classified into five evidence classes, each bound to one skill-document
section:

    EC1 wrong conclusion, correct info      -> K
    EC2 bottleneck or wrong routing         -> R
    EC3 one agent, incompatible sub-tasks   -> T
    EC4 malformed message / type mismatch   -> P
    EC5 successful pattern, not yet codified-> T

The default classifier here is rule-based and fully deterministic so the
whole design loop can run hermetically; a model-backed classifier can be
swapped in behind the same output contract.
"""

from __future__ import annotations

import bisect
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .doc import RoleTemplate, SectionId

if TYPE_CHECKING:
    from .bank import OracleVerdict

TRACE_SCHEMA_VERSION = 1


class TurnKind(str, Enum):
    ROUTE = "route"
    TOOL_CALL = "tool_call"
    RESPOND = "respond"
    AGGREGATE = "aggregate"
    FAULT = "fault"


class FaultCategory(str, Enum):
    MALFORMED_MESSAGE = "malformed_message"
    TYPE_MISMATCH = "type_mismatch"
    TOOL_ERROR = "tool_error"
    CONSTRAINT_VIOLATION = "constraint_violation"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class FaultRecord:
    category: FaultCategory
    detail: str
    field: str | None = None


@dataclass(frozen=True)
class ToolCallRecord:
    tool: str
    args: Mapping
    result: Mapping  # {"ok": payload} or {"error": {"category": ..., "detail": ...}}

    @property
    def failed(self) -> bool:
        return "error" in self.result

    @property
    def error_category(self) -> str | None:
        if self.failed:
            return self.result["error"].get("category")
        return None


@dataclass(frozen=True)
class Turn:
    index: int
    node: str
    kind: TurnKind
    tool_call: ToolCallRecord | None = None
    message: Mapping | None = None
    fault: FaultRecord | None = None

    def __post_init__(self):
        if (self.kind is TurnKind.TOOL_CALL) != (self.tool_call is not None):
            raise ValueError("tool_call payload present iff kind is tool_call")
        if (self.kind is TurnKind.FAULT) != (self.fault is not None):
            raise ValueError("fault payload present iff kind is fault")


@dataclass(frozen=True)
class BudgetUsage:
    turns: int = 0
    actions: int = 0
    tokens: int = 0
    wall_ms: int = 0


@dataclass(frozen=True)
class ExecutionTrace:
    trace_id: str
    task_id: str
    task_type: str
    turns: tuple[Turn, ...] = ()
    outcome: "OracleVerdict | None" = None
    budget_usage: BudgetUsage = BudgetUsage()

    def __post_init__(self):
        if self.budget_usage.turns != len(self.turns):
            raise ValueError("budget_usage.turns must equal the number of turns")
        for i, turn in enumerate(self.turns):
            if turn.index != i:
                raise ValueError("turns must be strictly ordered from index 0")

    def with_outcome(self, outcome: "OracleVerdict") -> "ExecutionTrace":
        return replace(self, outcome=outcome)

    def tool_calls(self) -> list[Turn]:
        return [t for t in self.turns if t.kind is TurnKind.TOOL_CALL]


class EvidenceClass(str, Enum):
    EC1 = "EC1"
    EC2 = "EC2"
    EC3 = "EC3"
    EC4 = "EC4"
    EC5 = "EC5"


EC_TARGET_SECTION: Mapping[EvidenceClass, SectionId] = {
    EvidenceClass.EC1: SectionId.K,
    EvidenceClass.EC2: SectionId.R,
    EvidenceClass.EC3: SectionId.T,
    EvidenceClass.EC4: SectionId.P,
    EvidenceClass.EC5: SectionId.T,
}


@dataclass(frozen=True)
class RuleDraft:
    section: SectionId
    text: str
    citations: frozenset[str] = frozenset()


@dataclass(frozen=True)
class RoleDraft:
    template: RoleTemplate


@dataclass(frozen=True)
class EvidenceItem:
    ec: EvidenceClass
    target_section: SectionId
    failed_trace: str
    paired_success: str | None = None
    rationale: str = ""
    proposed_edit: RuleDraft | RoleDraft | None = None
    details: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if EC_TARGET_SECTION[self.ec] is not self.target_section:
            raise ValueError(
                f"{self.ec.value} items must target section "
                f"{EC_TARGET_SECTION[self.ec].value}, got {self.target_section.value}"
            )


@dataclass(frozen=True)
class TracePair:
    failed: ExecutionTrace
    success: ExecutionTrace | None

    @property
    def unpaired(self) -> bool:
        return self.success is None


def pair_traces(
    failed: Sequence[ExecutionTrace], succeeded: Sequence[ExecutionTrace]
) -> list[TracePair]:
    """Pair each failed trace with a same-task-type success, nearest by
    task_id under lexical order; successes are reusable, unmatched failures
    come back with no pair."""
    by_type: dict[str, list[ExecutionTrace]] = {}
    for trace in succeeded:
        by_type.setdefault(trace.task_type, []).append(trace)
    for traces in by_type.values():
        traces.sort(key=lambda t: t.task_id)

    pairs = []
    for trace in failed:
        candidates = by_type.get(trace.task_type)
        if not candidates:
            pairs.append(TracePair(trace, None))
            continue
        ids = [c.task_id for c in candidates]
        pos = bisect.bisect_left(ids, trace.task_id)
        choices = []
        if pos > 0:
            choices.append(candidates[pos - 1])
        if pos < len(candidates):
            choices.append(candidates[pos])
        match = min(choices, key=lambda c: (abs_rank(ids, c.task_id, trace.task_id), c.task_id))
        pairs.append(TracePair(trace, match))
    return pairs


def abs_rank(sorted_ids: list[str], candidate: str, target: str) -> int:
    """Rank distance between a candidate and the target's insertion point."""
    return abs(sorted_ids.index(candidate) - bisect.bisect_left(sorted_ids, target))


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def _node_categories(trace: ExecutionTrace, categories: Mapping[str, str]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for turn in trace.tool_calls():
        cat = categories.get(turn.tool_call.tool)
        if cat is not None:
            out.setdefault(turn.node, set()).add(cat)
    return out


def _repeated_window(trace: ExecutionTrace, width: int) -> tuple[str, ...] | None:
    steps = [(t.node, t.kind.value) for t in trace.turns]
    seen: dict[tuple, int] = {}
    for i in range(len(steps) - width + 1):
        window = tuple(steps[i : i + width])
        start = seen.get(window)
        if start is not None and i >= start + width:  # non-overlapping repeat
            return tuple(f"{node}:{kind}" for node, kind in window)
        if window not in seen:
            seen[window] = i
    return None


@dataclass
class EvidenceClassifier:
    """Deterministic signature rules applied in priority order EC4 -> EC3 ->
    EC2 -> EC1, plus EC5 on paired successes.

    ``tool_categories`` maps tool name -> category (from the environment's
    registry); ``skill_text`` lets EC5 skip patterns already codified.
    """

    tool_categories: Mapping[str, str] = field(default_factory=dict)
    skill_text: str | None = None
    bottleneck_fraction: float = 0.60
    pattern_width: int = 3

    def classify(self, pair: TracePair) -> list[EvidenceItem]:
        failed, success = pair.failed, pair.success
        if failed.outcome is None:
            raise ValueError(f"trace {failed.trace_id} has no oracle verdict")
        if failed.outcome.passed:
            raise ValueError(f"trace {failed.trace_id} did not fail")

        items = []
        primary = (
            self._ec4(failed, success)
            or self._ec3(failed, success)
            or self._ec2(failed, success)
            or self._ec1(failed, success)
        )
        if primary is not None:
            items.append(primary)
        if success is not None:
            ec5 = self._ec5(failed, success)
            if ec5 is not None:
                items.append(ec5)
        return items

    # -- signatures ---------------------------------------------------------

    def _cite(self, failed: ExecutionTrace, success: ExecutionTrace | None) -> frozenset[str]:
        ids = {failed.trace_id}
        if success is not None:
            ids.add(success.trace_id)
        return frozenset(ids)

    def _ec4(self, failed, success) -> EvidenceItem | None:
        for turn in failed.turns:
            if turn.fault and turn.fault.category in (
                FaultCategory.MALFORMED_MESSAGE,
                FaultCategory.TYPE_MISMATCH,
            ):
                fault = turn.fault
                field_name = fault.field or "payload"
                text = (
                    f"Validate inter-agent payloads on {failed.task_type} tasks before "
                    f"handoff; reject messages with a missing or mistyped "
                    f"'{field_name}' field."
                )
                return EvidenceItem(
                    ec=EvidenceClass.EC4,
                    target_section=SectionId.P,
                    failed_trace=failed.trace_id,
                    paired_success=success.trace_id if success else None,
                    rationale=(
                        f"turn {turn.index} on node {turn.node} faulted with "
                        f"{fault.category.value} ({field_name})"
                    ),
                    proposed_edit=RuleDraft(SectionId.P, text, self._cite(failed, success)),
                    details={"node": turn.node, "field": field_name},
                )
        return None

    def _ec3(self, failed, success) -> EvidenceItem | None:
        if success is None:
            return None
        failed_cats = _node_categories(failed, self.tool_categories)
        offenders = sorted(n for n, cats in failed_cats.items() if len(cats) >= 2)
        if not offenders:
            return None
        node = offenders[0]
        cats = failed_cats[node]
        success_cats = _node_categories(success, self.tool_categories)
        success_union = set().union(*success_cats.values()) if success_cats else set()
        lacks = not cats.issubset(success_union)
        splits = not any(cats.issubset(c) for c in success_cats.values())
        if not (lacks or splits):
            return None
        tools = sorted(
            t.tool_call.tool
            for t in failed.tool_calls()
            if t.node == node and self.tool_categories.get(t.tool_call.tool) in cats
        )
        cat_list = ", ".join(sorted(cats))
        return EvidenceItem(
            ec=EvidenceClass.EC3,
            target_section=SectionId.T,
            failed_trace=failed.trace_id,
            paired_success=success.trace_id,
            rationale=(
                f"node {node} handled incompatible sub-tasks spanning categories "
                f"[{cat_list}] while the paired success "
                f"{'lacked one of them' if lacks else 'split them across agents'}"
            ),
            details={
                "node": node,
                "categories": tuple(sorted(cats)),
                "tools": tuple(dict.fromkeys(tools)),
            },
        )

    def _ec2(self, failed, success) -> EvidenceItem | None:
        nodes = Counter(t.node for t in failed.turns)
        if len(nodes) >= 2:
            node, count = nodes.most_common(1)[0]
            if count / len(failed.turns) >= self.bottleneck_fraction:
                text = (
                    f"On {failed.task_type} tasks, avoid concentrating work on a "
                    f"single node; distribute sub-tasks off '{node}'."
                )
                return EvidenceItem(
                    ec=EvidenceClass.EC2,
                    target_section=SectionId.R,
                    failed_trace=failed.trace_id,
                    paired_success=success.trace_id if success else None,
                    rationale=(
                        f"node {node} consumed {count} of {len(failed.turns)} turns "
                        f"({count / len(failed.turns):.0%})"
                    ),
                    proposed_edit=RuleDraft(SectionId.R, text, self._cite(failed, success)),
                    details={"node": node},
                )
        # Routing turn sent work to a node that then lacked the needed tool.
        for i, turn in enumerate(failed.turns):
            if turn.kind is not TurnKind.ROUTE or turn.message is None:
                continue
            for target in turn.message.get("to", ()):
                nxt = next((t for t in failed.turns[i + 1 :] if t.node == target), None)
                if (
                    nxt is not None
                    and nxt.fault is not None
                    and nxt.fault.category is FaultCategory.TOOL_ERROR
                    and "not permitted" in nxt.fault.detail
                ):
                    text = (
                        f"Route {failed.task_type} tasks only to agents whose tool "
                        f"access covers the required category."
                    )
                    return EvidenceItem(
                        ec=EvidenceClass.EC2,
                        target_section=SectionId.R,
                        failed_trace=failed.trace_id,
                        paired_success=success.trace_id if success else None,
                        rationale=(
                            f"routing turn {turn.index} targeted {target}, which then "
                            f"faulted: {nxt.fault.detail}"
                        ),
                        proposed_edit=RuleDraft(SectionId.R, text, self._cite(failed, success)),
                        details={"node": target},
                    )
        return None

    def _ec1(self, failed, success) -> EvidenceItem | None:
        violation = None
        for turn in failed.turns:
            if turn.fault and turn.fault.category is FaultCategory.CONSTRAINT_VIOLATION:
                violation = {"detail": turn.fault.detail, "constraint": None}
                break
            if (
                turn.tool_call is not None
                and turn.tool_call.error_category == "constraint_violation"
            ):
                err = turn.tool_call.result["error"]
                violation = {"detail": err.get("detail", ""), "constraint": err.get("constraint")}
                break
        if violation is not None:
            cid = violation["constraint"] or "the violated constraint"
            text = (
                f"On {failed.task_type} tasks, satisfy constraint '{cid}' before "
                f"acting: {violation['detail']}"
            )
            return EvidenceItem(
                ec=EvidenceClass.EC1,
                target_section=SectionId.K,
                failed_trace=failed.trace_id,
                paired_success=success.trace_id if success else None,
                rationale=f"constraint violation: {violation['detail']}",
                proposed_edit=RuleDraft(SectionId.K, text, self._cite(failed, success)),
                details={"constraint": violation["constraint"]},
            )
        if failed.outcome is not None and not failed.outcome.c5_target_action_correct:
            text = (
                f"On {failed.task_type} tasks, always complete the task's target "
                f"action with the exact requested arguments."
            )
            return EvidenceItem(
                ec=EvidenceClass.EC1,
                target_section=SectionId.K,
                failed_trace=failed.trace_id,
                paired_success=success.trace_id if success else None,
                rationale="target action missing or wrong despite correct information",
                proposed_edit=RuleDraft(SectionId.K, text, self._cite(failed, success)),
            )
        return None

    def _ec5(self, failed, success) -> EvidenceItem | None:
        pattern = _repeated_window(success, self.pattern_width)
        if pattern is None:
            return None
        pattern_text = " -> ".join(pattern)
        if self.skill_text is not None and pattern_text in self.skill_text:
            return None
        text = f"Reusable pattern for {success.task_type} tasks: {pattern_text}"
        return EvidenceItem(
            ec=EvidenceClass.EC5,
            target_section=SectionId.T,
            failed_trace=failed.trace_id,
            paired_success=success.trace_id,
            rationale=f"success trace repeats a {self.pattern_width}-turn pattern not yet codified",
            proposed_edit=RuleDraft(SectionId.T, text, frozenset({success.trace_id})),
        )


def classify_evidence(pair: TracePair, classifier: EvidenceClassifier) -> list[EvidenceItem]:
    return classifier.classify(pair)


# ---------------------------------------------------------------------------
# Signal metrics
# ---------------------------------------------------------------------------


class SignalDecision(str, Enum):
    PROCEED = "proceed"
    ABORT = "abort"


def signal_strength_check(
    items: Sequence[EvidenceItem], threshold: float = 0.30
) -> SignalDecision:
    """Abort when actionable evidence (EC1+EC2) is under the threshold share;
    an empty batch also aborts (no signal means a miscalibrated sandbox)."""
    if not items:
        return SignalDecision.ABORT
    actionable = sum(1 for i in items if i.ec in (EvidenceClass.EC1, EvidenceClass.EC2))
    return SignalDecision.PROCEED if actionable / len(items) >= threshold else SignalDecision.ABORT


@dataclass(frozen=True)
class TurnEfficiencyReport:
    total_turns: int
    tool_call_turns: int
    hit_turn_limit: bool

    @property
    def efficiency(self) -> float:
        return self.tool_call_turns / self.total_turns


def turn_efficiency(trace: ExecutionTrace, turn_limit: int) -> TurnEfficiencyReport:
    if not trace.turns:
        raise ValueError("cannot compute turn efficiency of an empty trace")
    tool_turns = len(trace.tool_calls())
    return TurnEfficiencyReport(len(trace.turns), tool_turns, len(trace.turns) >= turn_limit)


@dataclass(frozen=True)
class DistributionTable:
    groups: tuple[str, ...]
    counts: Mapping[str, Mapping[EvidenceClass, int]]
    column_totals: Mapping[EvidenceClass, int]
    total: int


def evidence_distribution(
    items: Sequence[EvidenceItem], grouping: Sequence[str]
) -> DistributionTable:
    """Count matrix of evidence classes per group; ``grouping`` is parallel
    to ``items`` (e.g. the outer-loop index each item was observed in)."""
    if len(items) != len(grouping):
        raise ValueError("grouping must be parallel to items")
    groups = tuple(dict.fromkeys(grouping))
    counts: dict[str, dict[EvidenceClass, int]] = {
        g: {ec: 0 for ec in EvidenceClass} for g in groups
    }
    for item, group in zip(items, grouping):
        counts[group][item.ec] += 1
    column_totals = {
        ec: sum(counts[g][ec] for g in groups) for ec in EvidenceClass
    }
    return DistributionTable(groups, counts, column_totals, len(items))


# ---------------------------------------------------------------------------
# JSONL trace log
# ---------------------------------------------------------------------------


def _turn_to_dict(turn: Turn) -> dict:
    data: dict = {"index": turn.index, "node": turn.node, "kind": turn.kind.value}
    if turn.tool_call is not None:
        data["tool_call"] = {
            "tool": turn.tool_call.tool,
            "args": dict(turn.tool_call.args),
            "result": turn.tool_call.result,
        }
    if turn.message is not None:
        data["message"] = dict(turn.message)
    if turn.fault is not None:
        data["fault"] = {
            "category": turn.fault.category.value,
            "detail": turn.fault.detail,
            "field": turn.fault.field,
        }
    return data


def _turn_from_dict(data: Mapping) -> Turn:
    tool_call = None
    if "tool_call" in data:
        tc = data["tool_call"]
        tool_call = ToolCallRecord(tc["tool"], tc["args"], tc["result"])
    fault = None
    if "fault" in data:
        f = data["fault"]
        fault = FaultRecord(FaultCategory(f["category"]), f["detail"], f.get("field"))
    return Turn(
        index=data["index"],
        node=data["node"],
        kind=TurnKind(data["kind"]),
        tool_call=tool_call,
        message=data.get("message"),
        fault=fault,
    )


def trace_to_lines(trace: ExecutionTrace) -> list[str]:
    head = {
        "schema": TRACE_SCHEMA_VERSION,
        "rec": "meta",
        "trace_id": trace.trace_id,
        "task_id": trace.task_id,
        "task_type": trace.task_type,
    }
    lines = [json.dumps(head, sort_keys=True)]
    for turn in trace.turns:
        body = {
            "schema": TRACE_SCHEMA_VERSION,
            "rec": "turn",
            "trace_id": trace.trace_id,
            "turn": _turn_to_dict(turn),
        }
        lines.append(json.dumps(body, sort_keys=True))
    tail = {
        "schema": TRACE_SCHEMA_VERSION,
        "rec": "end",
        "trace_id": trace.trace_id,
        "budget_usage": {
            "turns": trace.budget_usage.turns,
            "actions": trace.budget_usage.actions,
            "tokens": trace.budget_usage.tokens,
            "wall_ms": trace.budget_usage.wall_ms,
        },
        "outcome": trace.outcome.to_json_dict() if trace.outcome is not None else None,
    }
    lines.append(json.dumps(tail, sort_keys=True))
    return lines


def write_traces(traces: Iterable[ExecutionTrace], path: str | Path) -> None:
    lines = []
    for trace in traces:
        lines.extend(trace_to_lines(trace))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_traces(path: str | Path) -> list[ExecutionTrace]:
    from .bank import OracleVerdict

    traces: list[ExecutionTrace] = []
    meta: dict | None = None
    turns: list[Turn] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        data = json.loads(raw)
        if data["schema"] != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema {data['schema']}")
        if data["rec"] == "meta":
            meta = data
            turns = []
        elif data["rec"] == "turn":
            turns.append(_turn_from_dict(data["turn"]))
        elif data["rec"] == "end":
            assert meta is not None, "trace end before meta"
            usage = BudgetUsage(**data["budget_usage"])
            outcome = (
                OracleVerdict.from_json_dict(data["outcome"])
                if data["outcome"] is not None
                else None
            )
            traces.append(
                ExecutionTrace(
                    trace_id=meta["trace_id"],
                    task_id=meta["task_id"],
                    task_type=meta["task_type"],
                    turns=tuple(turns),
                    outcome=outcome,
                    budget_usage=usage,
                )
            )
            meta = None
    return traces
