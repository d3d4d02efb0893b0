"""Meta-agent implementations: build a system from the document, analyze
trace pairs into evidence, apply targeted edits, and synthesize new roles.

The deterministic variant makes the whole loop testable with no model in the
loop: it builds a canonical topology for whichever family the seed document
targets, classifies evidence with the rule-based classifier, and inserts
proposed edits verbatim.  The LLM variant drives the same contracts through
a completion provider using editable prompt templates.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .bank import BankEnv
from .doc import (
    ContractSpec,
    EpistemicStance,
    Rule,
    RoleTemplate,
    SectionId,
    SkillDoc,
    parse_document,
    render_document,
    rule_id,
)
from .evidence import (
    EvidenceClass,
    EvidenceClassifier,
    EvidenceItem,
    RoleDraft,
    RuleDraft,
    TracePair,
)
from .graph import (
    AgentSpec,
    FunctionalType,
    GraphNode,
    NodeConfig,
    RoutingRule,
    TopologyFamily,
    TopologyGraph,
)
from .providers import CompletionProvider, CompletionRequest, UsageRecord

logger = logging.getLogger(__name__)


class MetaAgentError(RuntimeError):
    """BUILD/ANALYZE/UPDATE produced something unusable."""


class MetaAgent(Protocol):
    def build(self, doc: SkillDoc) -> AgentSpec: ...

    def analyze(self, pairs: Sequence[TracePair]) -> list[EvidenceItem]: ...

    def update(self, doc: SkillDoc, items: Sequence[EvidenceItem]) -> SkillDoc: ...

    def synthesize_role(self, item: EvidenceItem) -> RoleTemplate: ...


#: Tool category -> stance for synthesized roles.
CATEGORY_STANCES = {
    "authentication": EpistemicStance.ENFORCER,
    "account": EpistemicStance.VERIFIER,
    "credit": EpistemicStance.SKEPTIC,
    "currency": EpistemicStance.EXPLORER,
    "admin": EpistemicStance.ENFORCER,
}

_STANCE_NOUNS = {
    EpistemicStance.SKEPTIC: "Skeptic",
    EpistemicStance.VERIFIER: "Verifier",
    EpistemicStance.EXPLORER: "Explorer",
    EpistemicStance.SYNTHESIZER: "Synthesizer",
    EpistemicStance.ENFORCER: "Enforcer",
}

_TEXT_CONTRACT = ContractSpec(inputs=(("goal", "text"),), outputs=(("summary", "text"),))
_AGG_CONTRACT = ContractSpec(
    inputs=(("summary", "text"), ("ok", "boolean")), outputs=(("final", "text"),)
)


def _specialist_tools(env: BankEnv, category: str) -> frozenset[str]:
    tools = set(env.registry.by_category(category))
    tools.add("login")  # every worker may authenticate its own session
    return frozenset(tools)


@dataclass
class DeterministicMetaAgent:
    """Model-free meta-agent for hermetic runs.

    ``build`` reads the target family from the seed document's repulsion rule
    (falling back to Single) and emits a canonical spec for that family,
    naming specialists after the document's role templates when available.
    ``update`` inserts each item's proposed edit verbatim into its target
    section, stamping the current iteration from the document's provenance.
    """

    env: BankEnv
    classifier: EvidenceClassifier | None = None
    _skill_text: str = field(default="", repr=False)

    def __post_init__(self):
        if self.classifier is None:
            self.classifier = EvidenceClassifier(
                tool_categories=self.env.registry.categories_map()
            )

    # -- BUILD ---------------------------------------------------------------

    def target_family(self, doc: SkillDoc) -> TopologyFamily:
        for rule in doc.rules(SectionId.R):
            for family in TopologyFamily:
                if f"the {family.value} topology family" in rule.text:
                    return family
        return TopologyFamily.SINGLE

    def build(self, doc: SkillDoc) -> AgentSpec:
        self._skill_text = render_document(doc)
        self.classifier.skill_text = self._skill_text
        family = self.target_family(doc)
        builder = {
            TopologyFamily.SINGLE: self._build_single,
            TopologyFamily.PIPELINE: self._build_pipeline,
            TopologyFamily.ENSEMBLE: self._build_ensemble,
            TopologyFamily.DEBATE: self._build_debate,
            TopologyFamily.HIERARCHICAL: self._build_hierarchical,
            TopologyFamily.DYNAMIC_ROUTING: self._build_dynamic_routing,
        }[family]
        return builder(doc)

    def _all_tools(self) -> frozenset[str]:
        return frozenset(self.env.registry.names())

    def _specialist_names(self, doc: SkillDoc, count: int) -> list[str]:
        """Specialist node names, honoring discovered role templates first."""
        names = [t.role_name.replace(" ", "") for t in doc.role_templates]
        defaults = [
            "AccountSpecialist",
            "AdminSpecialist",
            "AuthSpecialist",
            "CreditSpecialist",
            "CurrencySpecialist",
        ]
        for name in defaults:
            if len(names) >= count:
                break
            if name not in names:
                names.append(name)
        return names[:count]

    def _build_single(self, doc: SkillDoc) -> AgentSpec:
        node = GraphNode("solo_executor", "SoloExecutor", FunctionalType.EXECUTOR)
        graph = TopologyGraph((node,), frozenset())
        configs = {
            "solo_executor": NodeConfig(
                "Execute the task end to end with full tool access.",
                self._all_tools(),
                _TEXT_CONTRACT,
            )
        }
        return AgentSpec(graph, configs, (), "solo_executor", "solo_executor")

    def _build_pipeline(self, doc: SkillDoc) -> AgentSpec:
        nodes = (
            GraphNode("intake_planner", "IntakePlanner", FunctionalType.PLANNER),
            GraphNode("core_executor", "CoreExecutor", FunctionalType.EXECUTOR),
            GraphNode("outcome_verifier", "OutcomeVerifier", FunctionalType.VERIFIER),
        )
        edges = frozenset(
            {("intake_planner", "core_executor"), ("core_executor", "outcome_verifier")}
        )
        configs = {
            "intake_planner": NodeConfig(
                "Plan the task and hand it to the executor.", frozenset(), _TEXT_CONTRACT
            ),
            "core_executor": NodeConfig(
                "Execute the plan with the full action toolset.",
                self._all_tools(),
                _TEXT_CONTRACT,
            ),
            "outcome_verifier": NodeConfig(
                "Verify the executor's outcome and respond.",
                frozenset({"get_balance", "get_account", "get_application", "audit_log"}),
                _TEXT_CONTRACT,
            ),
        }
        routing = (RoutingRule("always", "core_executor"),)
        graph = TopologyGraph(nodes, edges)
        return AgentSpec(graph, configs, routing, "intake_planner", "outcome_verifier")

    def _ensemble_like(
        self, doc: SkillDoc, hub: str, hub_name: str, hub_type: FunctionalType
    ) -> tuple[TopologyGraph, dict[str, NodeConfig], list[str]]:
        categories = ("account", "admin", "authentication", "credit", "currency")
        names = self._specialist_names(doc, len(categories))
        ids = [f"spec_{c}" for c in categories]
        nodes = [GraphNode(hub, hub_name, hub_type)]
        configs = {}
        shared_reads = frozenset({"get_balance", "get_fx_rate"})
        for node_id, name, category in zip(ids, names, categories):
            nodes.append(GraphNode(node_id, name, FunctionalType.SPECIALIST))
            reads = tuple(
                t
                for t in self.env.registry.by_category(category)
                if not self.env.registry.tools[t].is_action
            )
            configs[node_id] = NodeConfig(
                f"Handle {category} sub-tasks with least-privilege tools.",
                _specialist_tools(self.env, category) | frozenset(reads) | shared_reads,
                _TEXT_CONTRACT,
            )
        return TopologyGraph(tuple(nodes), frozenset()), configs, ids

    def _build_ensemble(self, doc: SkillDoc) -> AgentSpec:
        graph, configs, ids = self._ensemble_like(
            doc, "request_dispatcher", "RequestDispatcher", FunctionalType.ROUTER
        )
        agg = GraphNode("result_aggregator", "ResultAggregator", FunctionalType.AGGREGATOR)
        nodes = graph.nodes + (agg,)
        edges = frozenset(
            {("request_dispatcher", i) for i in ids} | {(i, "result_aggregator") for i in ids}
        )
        configs["request_dispatcher"] = NodeConfig(
            "Dispatch each task to the matching specialist.", frozenset(), _TEXT_CONTRACT
        )
        configs["result_aggregator"] = NodeConfig(
            "Combine specialist results into the final response.", frozenset(), _AGG_CONTRACT
        )
        routing = tuple(RoutingRule(f"category matches {i.split('_', 1)[1]}", i) for i in ids)
        return AgentSpec(
            TopologyGraph(nodes, edges), configs, routing, "request_dispatcher", "result_aggregator"
        )

    def _build_hierarchical(self, doc: SkillDoc) -> AgentSpec:
        graph, configs, ids = self._ensemble_like(
            doc, "central_manager", "CentralManager", FunctionalType.ROUTER
        )
        edges = frozenset(
            {("central_manager", i) for i in ids} | {(i, "central_manager") for i in ids}
        )
        configs["central_manager"] = NodeConfig(
            "Route sub-tasks to specialists and synthesize their reports.",
            frozenset({"get_balance", "get_account"}),
            _TEXT_CONTRACT,
        )
        routing = tuple(RoutingRule(f"category matches {i.split('_', 1)[1]}", i) for i in ids)
        return AgentSpec(
            TopologyGraph(graph.nodes, edges), configs, routing, "central_manager", "central_manager"
        )

    def _build_debate(self, doc: SkillDoc) -> AgentSpec:
        nodes = (
            GraphNode("case_advocate", "CaseAdvocate", FunctionalType.EXECUTOR),
            GraphNode("counter_skeptic", "CounterSkeptic", FunctionalType.VERIFIER),
            GraphNode("ruling_judge", "RulingJudge", FunctionalType.AGGREGATOR),
        )
        edges = frozenset(
            {
                ("case_advocate", "counter_skeptic"),
                ("counter_skeptic", "case_advocate"),
                ("case_advocate", "ruling_judge"),
                ("counter_skeptic", "ruling_judge"),
            }
        )
        configs = {
            "case_advocate": NodeConfig(
                "Perform the task and argue the result is correct.",
                self._all_tools(),
                _TEXT_CONTRACT,
            ),
            "counter_skeptic": NodeConfig(
                "Challenge the advocate's result with read-only checks.",
                frozenset({"get_balance", "get_account", "get_application", "audit_log"}),
                _TEXT_CONTRACT,
            ),
            "ruling_judge": NodeConfig(
                "Rule on the debate and respond.", frozenset(), _TEXT_CONTRACT
            ),
        }
        return AgentSpec(TopologyGraph(nodes, edges), configs, (), "case_advocate", "ruling_judge")

    def _build_dynamic_routing(self, doc: SkillDoc) -> AgentSpec:
        nodes = (
            GraphNode("adaptive_router", "AdaptiveRouter", FunctionalType.ROUTER),
            GraphNode("branch_main", "MainlineExecutor", FunctionalType.EXECUTOR),
            GraphNode("branch_light", "LightweightExecutor", FunctionalType.EXECUTOR),
            GraphNode("branch_review", "ReviewExecutor", FunctionalType.VERIFIER),
        )
        edges = frozenset(
            {
                ("adaptive_router", "branch_main"),
                ("adaptive_router", "branch_light"),
                ("adaptive_router", "branch_review"),
            }
        )
        configs = {
            "adaptive_router": NodeConfig(
                "Route by task complexity.", frozenset(), _TEXT_CONTRACT
            ),
            "branch_main": NodeConfig(
                "Handle standard tasks with full access.", self._all_tools(), _TEXT_CONTRACT
            ),
            "branch_light": NodeConfig(
                "Handle trivial lookups.",
                frozenset({"get_balance", "get_fx_rate"}),
                _TEXT_CONTRACT,
            ),
            "branch_review": NodeConfig(
                "Handle tasks needing review.",
                frozenset({"audit_log", "get_account"}),
                _TEXT_CONTRACT,
            ),
        }
        routing = (
            RoutingRule("default", "branch_main"),
            RoutingRule("trivial lookup", "branch_light"),
            RoutingRule("needs review", "branch_review"),
        )
        return AgentSpec(TopologyGraph(nodes, edges), configs, routing, "adaptive_router", "branch_main")

    # -- ANALYZE --------------------------------------------------------------

    def analyze(self, pairs: Sequence[TracePair]) -> list[EvidenceItem]:
        items: list[EvidenceItem] = []
        for pair in pairs:
            items.extend(self.classifier.classify(pair))
        return items

    # -- UPDATE ---------------------------------------------------------------

    def update(self, doc: SkillDoc, items: Sequence[EvidenceItem]) -> SkillDoc:
        created_at = doc.provenance.inner if doc.provenance else 0
        for item in items:
            edit = item.proposed_edit
            if isinstance(edit, RuleDraft):
                rule = Rule(
                    rule_id(edit.section, edit.text), edit.text, edit.citations, created_at
                )
                doc = doc.with_rule(edit.section, rule)
            elif isinstance(edit, RoleDraft):
                if all(t.role_name != edit.template.role_name for t in doc.role_templates):
                    doc = doc.with_role_template(edit.template)
            elif edit is None:
                logger.debug("skipping %s item with no proposed edit", item.ec.value)
        return doc

    # -- EC3 role synthesis -----------------------------------------------------

    def synthesize_role(self, item: EvidenceItem) -> RoleTemplate:
        if item.ec is not EvidenceClass.EC3:
            raise MetaAgentError("synthesize_role requires an EC3 item")
        categories = tuple(item.details.get("categories", ()))
        primary = categories[0] if categories else "account"
        stance = CATEGORY_STANCES.get(primary, EpistemicStance.VERIFIER)
        noun = _STANCE_NOUNS[stance]
        adjective = primary.capitalize() + "-Scope"
        tools = tuple(item.details.get("tools", ()))  # least privilege: observed tools only
        prompt = (
            f"Own {primary} sub-tasks exclusively. Failure mode observed: one agent "
            f"mixed categories {', '.join(categories) if categories else primary}. "
            f"Escalate anything outside {primary} back to the router."
        )
        return RoleTemplate(
            role_name=f"{adjective} {noun}",
            epistemic_stance=stance,
            system_prompt=prompt,
            tool_access=frozenset(tools),
            birth_trace=item.failed_trace,
            interface_contract=ContractSpec(
                inputs=(("goal", "text"),), outputs=(("summary", "text"), ("ok", "boolean"))
            ),
        )


# ---------------------------------------------------------------------------
# LLM-backed meta-agent
# ---------------------------------------------------------------------------

BUILD_TEMPLATE = """You design multi-agent systems. Read the design document below and emit an
AgentSpec as JSON with keys: graph {{nodes: [{{id, name, type}}], edges: [[from, to]]}},
nodes {{id: {{system_prompt, tool_access, contract_in, contract_out}}}}, routing_rules,
entry, exit. Types come from: Router, Planner, Executor, Verifier, Aggregator,
Specialist, Oracle. Available tools: {tools}.

{doc}
"""

ANALYZE_TEMPLATE = """Classify each failed/success trace pair into evidence classes EC1 (domain
knowledge, K), EC2 (routing/topology, R), EC3 (role gap, T), EC4 (interface, P),
EC5 (reusable success pattern, T). Reply with a JSON list of
{{ec, rationale, rule_text}} objects, one per pair at most.

{pairs}
"""

UPDATE_TEMPLATE = """Apply the evidence below to the design document: edit only the targeted
sections, keep the SKILL.md dialect intact, and return the full updated document.

Document:
{doc}

Evidence:
{evidence}
"""


@dataclass
class LlmMetaAgent:
    """Meta-agent backed by a completion provider.

    Prompt templates are plain assets; swap them freely.  Responses must be
    valid JSON (build/analyze) or a full SKILL.md document (update); anything
    else raises MetaAgentError so the loop can record a diagnostic iteration.
    """

    provider: CompletionProvider
    env: BankEnv
    model: str = "meta"
    usage: UsageRecord = field(default_factory=UsageRecord)
    deterministic: DeterministicMetaAgent | None = None

    def __post_init__(self):
        if self.deterministic is None:
            self.deterministic = DeterministicMetaAgent(self.env)

    def _complete(self, prompt: str, key: tuple[str, int] | None = None) -> str:
        request = CompletionRequest(
            model=self.model,
            system="You maintain a multi-agent design document.",
            messages=(("user", prompt),),
            key=key,
        )
        text, usage = self.provider.complete(request)
        self.usage = self.usage.merge(usage)
        return text

    def build(self, doc: SkillDoc) -> AgentSpec:
        from .graph import spec_from_json_dict

        prompt = BUILD_TEMPLATE.format(tools=", ".join(self.env.registry.names()), doc=render_document(doc))
        text = self._complete(prompt, key=("build", doc.revision))
        try:
            return spec_from_json_dict(json.loads(text))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise MetaAgentError(f"build response was not a valid AgentSpec: {exc}") from exc

    def analyze(self, pairs: Sequence[TracePair]) -> list[EvidenceItem]:
        if not pairs:
            return []
        summary = "\n".join(
            f"- failed {p.failed.trace_id} ({p.failed.task_type})"
            + (f" vs success {p.success.trace_id}" if p.success else " (unpaired)")
            for p in pairs
        )
        text = self._complete(ANALYZE_TEMPLATE.format(pairs=summary), key=("analyze", len(pairs)))
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MetaAgentError(f"analyze response was not JSON: {exc}") from exc
        items = []
        for entry, pair in zip(raw, pairs):
            ec = EvidenceClass(entry["ec"])
            section = {"EC1": SectionId.K, "EC2": SectionId.R, "EC3": SectionId.T,
                       "EC4": SectionId.P, "EC5": SectionId.T}[ec.value]
            edit = None
            if entry.get("rule_text") and ec is not EvidenceClass.EC3:
                edit = RuleDraft(section, entry["rule_text"], frozenset({pair.failed.trace_id}))
            items.append(
                EvidenceItem(
                    ec=ec,
                    target_section=section,
                    failed_trace=pair.failed.trace_id,
                    paired_success=pair.success.trace_id if pair.success else None,
                    rationale=entry.get("rationale", ""),
                    proposed_edit=edit,
                )
            )
        return items

    def update(self, doc: SkillDoc, items: Sequence[EvidenceItem]) -> SkillDoc:
        if not items:
            return doc
        evidence = "\n".join(f"- {i.ec.value} -> {i.target_section.value}: {i.rationale}" for i in items)
        text = self._complete(
            UPDATE_TEMPLATE.format(doc=render_document(doc), evidence=evidence),
            key=("update", doc.revision),
        )
        try:
            updated = parse_document(text)
        except ValueError as exc:
            raise MetaAgentError(f"update response was not a valid document: {exc}") from exc
        from dataclasses import replace as dc_replace

        return dc_replace(updated, revision=doc.revision + 1, provenance=doc.provenance)

    def synthesize_role(self, item: EvidenceItem) -> RoleTemplate:
        return self.deterministic.synthesize_role(item)
