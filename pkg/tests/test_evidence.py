from __future__ import annotations

import pytest

from skillloop.bank import OracleVerdict
from skillloop.doc import SectionId
from skillloop.evidence import (
    EC_TARGET_SECTION,
    BudgetUsage,
    EvidenceClass,
    EvidenceClassifier,
    EvidenceItem,
    ExecutionTrace,
    FaultCategory,
    FaultRecord,
    SignalDecision,
    ToolCallRecord,
    TracePair,
    Turn,
    TurnKind,
    evidence_distribution,
    pair_traces,
    read_traces,
    signal_strength_check,
    turn_efficiency,
    write_traces,
)

PASS = OracleVerdict(True, True, True, True, True)
FAIL_C5 = OracleVerdict(True, True, False, True, False)
FAIL_C2 = OracleVerdict(True, False, False, True, False)

CATEGORIES = {
    "login": "authentication",
    "deposit": "account",
    "withdraw": "account",
    "approve_credit": "credit",
    "get_fx_rate": "currency",
}


def tool_turn(index, node, tool, ok=True, error_category="tool_error", extra=None):
    result = {"ok": {}} if ok else {"error": {"category": error_category, "detail": "boom", **(extra or {})}}
    return Turn(index, node, TurnKind.TOOL_CALL, tool_call=ToolCallRecord(tool, {}, result))


def fault_turn(index, node, category, detail="bad", field=None):
    return Turn(index, node, TurnKind.FAULT, fault=FaultRecord(category, detail, field))


def plain_turn(index, node, kind=TurnKind.RESPOND, message=None):
    return Turn(index, node, kind, message=message)


def trace(trace_id, turns, outcome=None, task_id="bank-001", task_type="account", actions=0):
    return ExecutionTrace(
        trace_id,
        task_id,
        task_type,
        tuple(turns),
        outcome,
        BudgetUsage(turns=len(turns), actions=actions),
    )


def classifier(**kwargs):
    return EvidenceClassifier(tool_categories=CATEGORIES, **kwargs)


# ---------------------------------------------------------------------------
# structural invariants
# ---------------------------------------------------------------------------


def test_turn_kind_payload_invariants():
    with pytest.raises(ValueError):
        Turn(0, "n", TurnKind.TOOL_CALL)  # kind says tool_call, payload missing
    with pytest.raises(ValueError):
        Turn(0, "n", TurnKind.ROUTE, fault=FaultRecord(FaultCategory.TOOL_ERROR, "x"))


def test_trace_turn_count_invariant():
    with pytest.raises(ValueError):
        ExecutionTrace("t", "task", "cat", (plain_turn(0, "n"),), None, BudgetUsage(turns=2))


def test_evidence_item_section_binding_is_enforced():
    with pytest.raises(ValueError):
        EvidenceItem(EvidenceClass.EC1, SectionId.R, "t1")
    for ec, section in EC_TARGET_SECTION.items():
        EvidenceItem(ec, section, "t1")  # all five bindings constructible


# ---------------------------------------------------------------------------
# pairing
# ---------------------------------------------------------------------------


def test_pairing_same_type():
    failed = trace("f1", [plain_turn(0, "n")], FAIL_C5, task_type="credit")
    success = trace("s1", [plain_turn(0, "n")], PASS, task_type="credit")
    (pair,) = pair_traces([failed], [success])
    assert pair.success is success


def test_pairing_no_same_type_success_flags_unpaired():
    failed = trace("f1", [plain_turn(0, "n")], FAIL_C5, task_type="fx")
    success = trace("s1", [plain_turn(0, "n")], PASS, task_type="auth")
    (pair,) = pair_traces([failed], [success])
    assert pair.unpaired


def test_pairing_reuses_a_success_across_failures():
    f1 = trace("f1", [plain_turn(0, "n")], FAIL_C5, task_id="bank-001", task_type="auth")
    f2 = trace("f2", [plain_turn(0, "n")], FAIL_C5, task_id="bank-009", task_type="auth")
    s = trace("s1", [plain_turn(0, "n")], PASS, task_id="bank-005", task_type="auth")
    pairs = pair_traces([f1, f2], [s])
    assert [p.success for p in pairs] == [s, s]


def test_pairing_picks_lexically_nearest_task_id():
    failed = trace("f", [plain_turn(0, "n")], FAIL_C5, task_id="bank-500", task_type="x")
    near = trace("s-near", [plain_turn(0, "n")], PASS, task_id="bank-400", task_type="x")
    far = trace("s-far", [plain_turn(0, "n")], PASS, task_id="bank-100", task_type="x")
    (pair,) = pair_traces([failed], [far, near])
    assert pair.success is near


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def test_type_mismatch_fault_yields_ec4_targeting_p():
    failed = trace(
        "f1",
        [tool_turn(0, "a", "login"), fault_turn(1, "a", FaultCategory.TYPE_MISMATCH, field="ok")],
        FAIL_C5,
    )
    items = classifier().classify(TracePair(failed, None))
    (item,) = items
    assert item.ec is EvidenceClass.EC4
    assert item.target_section is SectionId.P
    assert "ok" in item.proposed_edit.text


def test_incompatible_subtasks_yield_ec3_targeting_t():
    failed = trace(
        "f1",
        [tool_turn(0, "solo", "login"), tool_turn(1, "solo", "deposit"),
         tool_turn(2, "solo", "approve_credit")],
        FAIL_C5,
    )
    success = trace(
        "s1",
        [tool_turn(0, "solo", "login"), tool_turn(1, "solo", "deposit")],
        PASS,
    )
    (item,) = classifier().classify(TracePair(failed, success))
    assert item.ec is EvidenceClass.EC3
    assert item.target_section is SectionId.T
    assert set(item.details["categories"]) == {"authentication", "account", "credit"}
    assert item.paired_success == "s1"


def test_ec3_requires_a_paired_success():
    failed = trace(
        "f1",
        [tool_turn(0, "solo", "deposit"), tool_turn(1, "solo", "approve_credit")],
        FAIL_C5,
    )
    items = classifier().classify(TracePair(failed, None))
    assert all(i.ec is not EvidenceClass.EC3 for i in items)


def test_constraint_violation_yields_ec1_targeting_k():
    failed = trace(
        "f1",
        [tool_turn(0, "solo", "withdraw", ok=False, error_category="constraint_violation",
                   extra={"constraint": "sufficient_funds"})],
        FAIL_C2,
    )
    (item,) = classifier().classify(TracePair(failed, None))
    assert item.ec is EvidenceClass.EC1
    assert item.target_section is SectionId.K
    assert "sufficient_funds" in item.proposed_edit.text


def test_bottleneck_yields_ec2_targeting_r():
    turns = [plain_turn(0, "router", TurnKind.ROUTE, {"to": ["hot"]})]
    turns += [tool_turn(i, "hot", "deposit") for i in range(1, 5)]
    failed = trace("f1", turns, FAIL_C5)
    (item,) = classifier().classify(TracePair(failed, None))
    assert item.ec is EvidenceClass.EC2
    assert "hot" in item.rationale


def test_single_node_trace_is_not_a_bottleneck():
    turns = [tool_turn(i, "solo", "deposit") for i in range(4)]
    failed = trace("f1", turns, FAIL_C5)
    (item,) = classifier().classify(TracePair(failed, None))
    assert item.ec is EvidenceClass.EC1  # falls through to the c5 rule


def test_priority_ec4_beats_bottleneck():
    turns = [fault_turn(0, "hot", FaultCategory.TYPE_MISMATCH, field="x")]
    turns += [tool_turn(i, "hot", "deposit") for i in range(1, 5)]
    turns += [plain_turn(5, "other")]
    failed = trace("f1", turns, FAIL_C5)
    items = classifier().classify(TracePair(failed, None))
    assert items[0].ec is EvidenceClass.EC4


def test_route_to_unequipped_node_yields_ec2():
    turns = [
        plain_turn(0, "router", TurnKind.ROUTE, {"to": ["weak"]}),
        fault_turn(1, "weak", FaultCategory.TOOL_ERROR, "tool 'deposit' not permitted for node 'weak'"),
        plain_turn(2, "router", TurnKind.RESPOND),
        plain_turn(3, "other", TurnKind.RESPOND),
    ]
    failed = trace("f1", turns, FAIL_C5)
    (item,) = classifier().classify(TracePair(failed, None))
    assert item.ec is EvidenceClass.EC2
    assert "weak" in item.rationale


def test_ec5_fires_on_repeated_success_pattern():
    failed = trace("f1", [tool_turn(0, "solo", "withdraw", ok=False,
                                    error_category="constraint_violation")], FAIL_C2)
    success_turns = [tool_turn(i, "solo", "deposit") for i in range(6)]
    success = trace("s1", success_turns, PASS)
    items = classifier().classify(TracePair(failed, success))
    ec5 = [i for i in items if i.ec is EvidenceClass.EC5]
    assert len(ec5) == 1
    assert ec5[0].target_section is SectionId.T
    assert "solo:tool_call" in ec5[0].proposed_edit.text


def test_ec5_suppressed_when_pattern_already_in_document():
    failed = trace("f1", [tool_turn(0, "solo", "withdraw", ok=False,
                                    error_category="constraint_violation")], FAIL_C2)
    success = trace("s1", [tool_turn(i, "solo", "deposit") for i in range(6)], PASS)
    skill_text = "solo:tool_call -> solo:tool_call -> solo:tool_call"
    items = classifier(skill_text=skill_text).classify(TracePair(failed, success))
    assert all(i.ec is not EvidenceClass.EC5 for i in items)


def test_classifier_requires_verdict():
    bare = trace("f1", [plain_turn(0, "n")], None)
    with pytest.raises(ValueError, match="no oracle verdict"):
        classifier().classify(TracePair(bare, None))


def test_classifier_is_deterministic():
    failed = trace(
        "f1",
        [tool_turn(0, "solo", "login"), tool_turn(1, "solo", "deposit"),
         tool_turn(2, "solo", "approve_credit")],
        FAIL_C5,
    )
    success = trace("s1", [tool_turn(0, "solo", "login")], PASS)
    first = classifier().classify(TracePair(failed, success))
    second = classifier().classify(TracePair(failed, success))
    assert [(i.ec, i.rationale, i.proposed_edit) for i in first] == [
        (i.ec, i.rationale, i.proposed_edit) for i in second
    ]


# ---------------------------------------------------------------------------
# signal strength
# ---------------------------------------------------------------------------


def _items(counts: dict[EvidenceClass, int]) -> list[EvidenceItem]:
    out = []
    for ec, n in counts.items():
        out.extend(
            EvidenceItem(ec, EC_TARGET_SECTION[ec], f"f{ec.value}{i}") for i in range(n)
        )
    return out


def test_signal_check_aborts_at_twenty_percent():
    items = _items({EvidenceClass.EC1: 2, EvidenceClass.EC4: 8})
    assert signal_strength_check(items) is SignalDecision.ABORT


def test_signal_check_proceeds_at_half():
    items = _items({EvidenceClass.EC1: 5, EvidenceClass.EC4: 5})
    assert signal_strength_check(items) is SignalDecision.PROCEED


def test_signal_check_aborts_on_empty():
    assert signal_strength_check([]) is SignalDecision.ABORT


def test_signal_check_threshold_is_inclusive():
    items = _items({EvidenceClass.EC2: 3, EvidenceClass.EC4: 7})
    assert signal_strength_check(items, threshold=0.30) is SignalDecision.PROCEED


# ---------------------------------------------------------------------------
# turn efficiency
# ---------------------------------------------------------------------------


def _mixed_trace(total, tools):
    turns = [tool_turn(i, "n", "deposit") for i in range(tools)]
    turns += [plain_turn(i, "n", TurnKind.ROUTE, {"to": ["n2"]}) for i in range(tools, total)]
    return trace("t", turns)


def test_turn_efficiency_quarter():
    report = turn_efficiency(_mixed_trace(20, 5), 20)
    assert report.efficiency == 0.25
    assert report.hit_turn_limit


def test_turn_efficiency_all_tools():
    report = turn_efficiency(_mixed_trace(20, 20), 20)
    assert report.efficiency == 1.0


def test_turn_efficiency_short_trace():
    report = turn_efficiency(_mixed_trace(3, 0), 20)
    assert report.efficiency == 0.0
    assert not report.hit_turn_limit


def test_turn_efficiency_integer_identity():
    for total, tools in ((20, 5), (7, 3), (1, 1)):
        report = turn_efficiency(_mixed_trace(total, tools), 20)
        assert report.efficiency * report.total_turns == pytest.approx(report.tool_call_turns)


def test_turn_efficiency_empty_trace_errors():
    with pytest.raises(ValueError):
        turn_efficiency(trace("t", []), 20)


# ---------------------------------------------------------------------------
# distribution table
# ---------------------------------------------------------------------------


def test_distribution_empty():
    table = evidence_distribution([], [])
    assert table.total == 0
    assert all(v == 0 for v in table.column_totals.values())


def test_distribution_matches_published_totals():
    per_loop = {
        "O1": (10, 9, 2, 17, 2),
        "O2": (7, 17, 6, 8, 2),
        "O3": (11, 25, 1, 0, 2),
    }
    items, groups = [], []
    for group, counts in per_loop.items():
        for ec, n in zip(EvidenceClass, counts):
            for i in range(n):
                items.append(EvidenceItem(ec, EC_TARGET_SECTION[ec], f"{group}-{ec.value}-{i}"))
                groups.append(group)
    table = evidence_distribution(items, groups)
    assert [table.column_totals[ec] for ec in EvidenceClass] == [28, 51, 9, 25, 6]
    assert table.total == 119
    assert table.counts["O2"][EvidenceClass.EC2] == 17


def test_distribution_single_item():
    item = EvidenceItem(EvidenceClass.EC3, SectionId.T, "f1")
    table = evidence_distribution([item], ["O1"])
    assert table.counts["O1"][EvidenceClass.EC3] == 1
    assert table.total == 1


def test_distribution_requires_parallel_grouping():
    item = EvidenceItem(EvidenceClass.EC3, SectionId.T, "f1")
    with pytest.raises(ValueError):
        evidence_distribution([item], [])


# ---------------------------------------------------------------------------
# JSONL log round trip
# ---------------------------------------------------------------------------


def test_trace_log_round_trip(tmp_path):
    traces = [
        trace(
            "t-1",
            [
                tool_turn(0, "a", "login"),
                plain_turn(1, "a", TurnKind.ROUTE, {"to": ["b"]}),
                fault_turn(2, "b", FaultCategory.BUDGET_EXHAUSTED, "turn budget exhausted"),
            ],
            PASS,
            actions=1,
        ),
        trace("t-2", [plain_turn(0, "a")], FAIL_C5),
    ]
    path = tmp_path / "traces.jsonl"
    write_traces(traces, path)
    again = read_traces(path)
    assert again == traces
    # writing back is bit-stable
    second = tmp_path / "again.jsonl"
    write_traces(again, second)
    assert second.read_bytes() == path.read_bytes()
