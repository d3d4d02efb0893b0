"""Agent topology graphs: functional typing, exact graph edit distance,
semantic distance, family classification, and the diversity archive.

Nodes carry a functional type from a closed 7-element taxonomy; distance is
computed on the typed structure so renaming a role cannot fake novelty.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from math import sqrt
from typing import Callable, Iterable, Mapping, Sequence

from .doc import ContractSpec


class FunctionalType(str, Enum):
    ROUTER = "Router"
    PLANNER = "Planner"
    EXECUTOR = "Executor"
    VERIFIER = "Verifier"
    AGGREGATOR = "Aggregator"
    SPECIALIST = "Specialist"
    ORACLE = "Oracle"


class TopologyFamily(str, Enum):
    SINGLE = "Single"
    PIPELINE = "Pipeline"
    ENSEMBLE = "Ensemble"
    DEBATE = "Debate"
    HIERARCHICAL = "Hierarchical"
    DYNAMIC_ROUTING = "DynamicRouting"


FAMILY_ORDER = tuple(TopologyFamily)


class SpecValidationError(ValueError):
    """An AgentSpec or graph failed structural validation."""


class GEDBoundError(ValueError):
    """Graph too large for the exactness bound; raise the bound explicitly."""


class DistinctnessError(ValueError):
    """Archive insertion rejected by the dual-criteria distinctness rule."""


@dataclass(frozen=True)
class GraphNode:
    id: str
    role_name: str
    type: FunctionalType


@dataclass(frozen=True)
class TopologyGraph:
    nodes: tuple[GraphNode, ...]
    edges: frozenset[tuple[str, str]]

    def __post_init__(self):
        if not self.nodes:
            raise SpecValidationError("graph must have at least one node")
        ids = [n.id for n in self.nodes]
        if len(ids) != len(set(ids)):
            raise SpecValidationError("duplicate node ids")
        known = set(ids)
        for src, dst in self.edges:
            if src == dst:
                raise SpecValidationError(f"self-loop on node {src!r}")
            if src not in known or dst not in known:
                raise SpecValidationError(f"edge ({src!r}, {dst!r}) references unknown node")

    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def type_of(self, node_id: str) -> FunctionalType:
        for n in self.nodes:
            if n.id == node_id:
                return n.type
        raise KeyError(node_id)

    def type_multiset(self) -> Counter:
        return Counter(n.type for n in self.nodes)

    def out_degree(self, node_id: str) -> int:
        return sum(1 for s, _ in self.edges if s == node_id)

    def in_degree(self, node_id: str) -> int:
        return sum(1 for _, d in self.edges if d == node_id)

    def to_json_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "name": n.role_name, "type": n.type.value} for n in self.nodes],
            "edges": sorted([s, d] for s, d in self.edges),
        }


def graph_from_json_dict(data: Mapping) -> TopologyGraph:
    nodes = tuple(
        GraphNode(n["id"], n.get("name", n["id"]), FunctionalType(n["type"]))
        for n in data["nodes"]
    )
    edges = frozenset((s, d) for s, d in data["edges"])
    return TopologyGraph(nodes, edges)


def make_graph(
    nodes: Iterable[tuple[str, str, FunctionalType]], edges: Iterable[tuple[str, str]]
) -> TopologyGraph:
    return TopologyGraph(tuple(GraphNode(*n) for n in nodes), frozenset(edges))


@dataclass(frozen=True)
class NodeConfig:
    system_prompt: str = ""
    tool_access: frozenset[str] = frozenset()
    contract: ContractSpec = ContractSpec()


@dataclass(frozen=True)
class RoutingRule:
    condition: str
    target: str


@dataclass(frozen=True)
class AgentSpec:
    """Buildable description of an agent system.

    Construction does not validate; call :meth:`validate` (the runtime's
    ``build_system`` does) so malformed specs loaded from JSON surface as
    build errors naming the offender.
    """

    graph: TopologyGraph
    node_configs: Mapping[str, NodeConfig]
    routing_rules: tuple[RoutingRule, ...]
    entry: str
    exit: str

    def validate(self, registry_tools: Iterable[str] | None = None) -> None:
        ids = set(self.graph.node_ids())
        for node_id in (self.entry, self.exit):
            if node_id not in ids:
                raise SpecValidationError(f"entry/exit node {node_id!r} not in graph")
        for rule in self.routing_rules:
            if rule.target not in ids:
                raise SpecValidationError(f"routing target {rule.target!r} not in graph")
        if set(self.node_configs) != ids:
            missing = ids.symmetric_difference(self.node_configs)
            raise SpecValidationError(f"node configs do not match graph nodes: {sorted(missing)}")
        if registry_tools is not None:
            known = set(registry_tools)
            for node_id in sorted(self.node_configs):
                for tool in sorted(self.node_configs[node_id].tool_access):
                    if tool not in known:
                        raise SpecValidationError(
                            f"node {node_id!r} requests unregistered tool {tool!r}"
                        )

    def to_json_dict(self) -> dict:
        return {
            "schema": 1,
            "graph": self.graph.to_json_dict(),
            "nodes": {
                node_id: {
                    "system_prompt": cfg.system_prompt,
                    "tool_access": sorted(cfg.tool_access),
                    "contract_in": list(map(list, cfg.contract.inputs)),
                    "contract_out": list(map(list, cfg.contract.outputs)),
                }
                for node_id, cfg in sorted(self.node_configs.items())
            },
            "routing_rules": [[r.condition, r.target] for r in self.routing_rules],
            "entry": self.entry,
            "exit": self.exit,
        }


def spec_from_json_dict(data: Mapping) -> AgentSpec:
    graph = graph_from_json_dict(data["graph"])
    configs = {
        node_id: NodeConfig(
            system_prompt=cfg.get("system_prompt", ""),
            tool_access=frozenset(cfg.get("tool_access", ())),
            contract=ContractSpec(
                inputs=tuple((n, t) for n, t in cfg.get("contract_in", ())),
                outputs=tuple((n, t) for n, t in cfg.get("contract_out", ())),
            ),
        )
        for node_id, cfg in data.get("nodes", {}).items()
    }
    routing = tuple(RoutingRule(c, t) for c, t in data.get("routing_rules", ()))
    return AgentSpec(graph, configs, routing, data["entry"], data["exit"])


@dataclass(frozen=True)
class RepulsionConfig:
    """Distance thresholds and edit costs for the diversity constraint."""

    delta_struct: float = 3.0
    delta_sem: float = 0.25
    node_substitution_cost: float = 1.0
    node_insert_delete_cost: float = 1.0
    edge_substitution_cost: float = 0.5
    edge_insert_delete_cost: float = 0.5

    def __post_init__(self):
        for name in (
            "delta_struct",
            "node_substitution_cost",
            "node_insert_delete_cost",
            "edge_substitution_cost",
            "edge_insert_delete_cost",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 <= self.delta_sem <= 2:
            raise ValueError("delta_sem must be in [0, 2]")


# ---------------------------------------------------------------------------
# Role canonicalization
# ---------------------------------------------------------------------------

RoleClassifier = Callable[[str, str], FunctionalType]

#: Keyword table scanned in order against the lowercased role name, then the
#: lowercased system prompt.  First hit wins; no hit means Specialist.
ROLE_KEYWORDS: tuple[tuple[str, FunctionalType], ...] = (
    ("router", FunctionalType.ROUTER),
    ("dispatcher", FunctionalType.ROUTER),
    ("dispatch", FunctionalType.ROUTER),
    ("triage", FunctionalType.ROUTER),
    ("route", FunctionalType.ROUTER),
    ("planner", FunctionalType.PLANNER),
    ("plan", FunctionalType.PLANNER),
    ("strategist", FunctionalType.PLANNER),
    ("scheduler", FunctionalType.PLANNER),
    ("aggregator", FunctionalType.AGGREGATOR),
    ("aggregate", FunctionalType.AGGREGATOR),
    ("synthesizer", FunctionalType.AGGREGATOR),
    ("synthesize", FunctionalType.AGGREGATOR),
    ("combiner", FunctionalType.AGGREGATOR),
    ("combine", FunctionalType.AGGREGATOR),
    ("merger", FunctionalType.AGGREGATOR),
    ("collector", FunctionalType.AGGREGATOR),
    ("summarizer", FunctionalType.AGGREGATOR),
    ("verifier", FunctionalType.VERIFIER),
    ("verify", FunctionalType.VERIFIER),
    ("checker", FunctionalType.VERIFIER),
    ("check", FunctionalType.VERIFIER),
    ("validator", FunctionalType.VERIFIER),
    ("validate", FunctionalType.VERIFIER),
    ("auditor", FunctionalType.VERIFIER),
    ("audit", FunctionalType.VERIFIER),
    ("reviewer", FunctionalType.VERIFIER),
    ("examiner", FunctionalType.VERIFIER),
    ("examine", FunctionalType.VERIFIER),
    ("analyzer", FunctionalType.VERIFIER),
    ("analyze", FunctionalType.VERIFIER),
    ("inspector", FunctionalType.VERIFIER),
    ("oracle", FunctionalType.ORACLE),
    ("lookup", FunctionalType.ORACLE),
    ("real-time", FunctionalType.ORACLE),
    ("executor", FunctionalType.EXECUTOR),
    ("execute", FunctionalType.EXECUTOR),
    ("operator", FunctionalType.EXECUTOR),
    ("perform", FunctionalType.EXECUTOR),
    ("transact", FunctionalType.EXECUTOR),
)


def default_role_classifier(role_name: str, system_prompt: str = "") -> FunctionalType:
    for text in (role_name.lower(), system_prompt.lower()):
        for keyword, ftype in ROLE_KEYWORDS:
            if keyword in text:
                return ftype
    return FunctionalType.SPECIALIST


def canonicalize_roles(
    spec: AgentSpec, classifier: RoleClassifier = default_role_classifier
) -> TopologyGraph:
    """Re-type every node through the classifier so distance computations see
    functional structure rather than whatever labels the builder chose."""
    nodes = tuple(
        replace(n, type=classifier(n.role_name, spec.node_configs[n.id].system_prompt))
        for n in spec.graph.nodes
    )
    return TopologyGraph(nodes, spec.graph.edges)


# ---------------------------------------------------------------------------
# Graph edit distance (exact)
# ---------------------------------------------------------------------------


def graph_edit_distance(
    a: TopologyGraph,
    b: TopologyGraph,
    costs: RepulsionConfig | None = None,
    max_nodes: int = 12,
) -> float:
    """Exact minimum edit cost between typed directed graphs.

    Searches full injective mappings from the smaller node set into the
    larger with branch-and-bound pruning; this is exact because substituting
    a node (or edge) never costs more than deleting and re-inserting it
    under these costs.  Symmetric, zero iff the graphs are isomorphic with
    matching functional types.
    """
    costs = costs or RepulsionConfig()
    for g in (a, b):
        if len(g.nodes) > max_nodes:
            raise GEDBoundError(
                f"graph has {len(g.nodes)} nodes, above the exactness bound "
                f"{max_nodes}; pass max_nodes explicitly to raise it"
            )
    small, large = (a, b) if len(a.nodes) <= len(b.nodes) else (b, a)
    s_ids = list(small.node_ids())
    l_ids = list(large.node_ids())
    s_type = {n.id: n.type for n in small.nodes}
    l_type = {n.id: n.type for n in large.nodes}
    s_edges = small.edges
    l_edges = large.edges

    extra_nodes = (len(l_ids) - len(s_ids)) * costs.node_insert_delete_cost
    e_cost = costs.edge_insert_delete_cost
    n_sub = costs.node_substitution_cost

    # Higher-degree nodes first: mapping mistakes get expensive early, so
    # pruning bites sooner.
    s_ids.sort(key=lambda i: -(small.out_degree(i) + small.in_degree(i)))

    best = float("inf")
    assigned: list[str] = []

    def edge_delta(si: str, li: str) -> float:
        delta = 0.0
        for sj, lj in zip(s_ids, assigned):
            for (u, v), (x, y) in (((si, sj), (li, lj)), ((sj, si), (lj, li))):
                in_a = (u, v) in s_edges
                in_b = (x, y) in l_edges
                if in_a != in_b:
                    delta += e_cost
        return delta

    def leaf_extra() -> float:
        image = set(assigned)
        uncovered = sum(1 for s, d in l_edges if s not in image or d not in image)
        return extra_nodes + uncovered * e_cost

    def dfs(i: int, cost: float):
        nonlocal best
        if cost >= best:
            return
        if i == len(s_ids):
            total = cost + leaf_extra()
            if total < best:
                best = total
            return
        si = s_ids[i]
        for li in l_ids:
            if li in assigned:
                continue
            delta = 0.0 if s_type[si] == l_type[li] else n_sub
            delta += edge_delta(si, li)
            assigned.append(li)
            dfs(i + 1, cost + delta)
            assigned.pop()

    dfs(0, 0.0)
    return best


def ged_matrix(
    graphs: Sequence[TopologyGraph], cfg: RepulsionConfig | None = None, max_nodes: int = 12
) -> list[list[float]]:
    n = len(graphs)
    matrix = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = graph_edit_distance(graphs[i], graphs[j], cfg, max_nodes=max_nodes)
            matrix[i][j] = matrix[j][i] = d
    return matrix


# ---------------------------------------------------------------------------
# Semantic distance
# ---------------------------------------------------------------------------

Embedder = Callable[[TopologyGraph], Sequence[float]]


def type_count_vector(graph: TopologyGraph) -> tuple[float, ...]:
    """L2-normalized 7-dimensional count vector over functional types."""
    counts = graph.type_multiset()
    raw = [float(counts.get(t, 0)) for t in FunctionalType]
    norm = sqrt(sum(x * x for x in raw))
    if norm == 0:
        raise ValueError("cannot embed a graph with no typed nodes")
    return tuple(x / norm for x in raw)


def semantic_distance(
    a: TopologyGraph, b: TopologyGraph, embedder: Embedder = type_count_vector
) -> float:
    """1 - cosine similarity of the role-set embeddings, in [0, 2]."""
    va, vb = embedder(a), embedder(b)
    na = sqrt(sum(x * x for x in va))
    nb = sqrt(sum(x * x for x in vb))
    if na == 0 or nb == 0:
        raise ValueError("zero-norm embedding")
    cos = sum(x * y for x, y in zip(va, vb)) / (na * nb)
    # rounding can push |cos| epsilon past 1, which would leak outside [0, 2]
    return 1.0 - min(1.0, max(-1.0, cos))


# ---------------------------------------------------------------------------
# Family classification
# ---------------------------------------------------------------------------


def _is_weakly_connected(g: TopologyGraph) -> bool:
    ids = list(g.node_ids())
    if len(ids) == 1:
        return True
    adjacency: dict[str, set[str]] = {i: set() for i in ids}
    for s, d in g.edges:
        adjacency[s].add(d)
        adjacency[d].add(s)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == len(ids)


def _is_acyclic(g: TopologyGraph) -> bool:
    indeg = {i: g.in_degree(i) for i in g.node_ids()}
    ready = [i for i, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        node = ready.pop()
        seen += 1
        for s, d in g.edges:
            if s == node:
                indeg[d] -= 1
                if indeg[d] == 0:
                    ready.append(d)
    return seen == len(g.nodes)


def _mutual_pairs(g: TopologyGraph) -> set[frozenset[str]]:
    return {frozenset((s, d)) for s, d in g.edges if (d, s) in g.edges}


def _score(conditions: Sequence[bool]) -> float:
    return sum(conditions) / len(conditions)


def _check_single(g: TopologyGraph) -> tuple[bool, float]:
    n = len(g.nodes)
    return n == 1, 1.0 / n


def _check_pipeline(g: TopologyGraph) -> tuple[bool, float]:
    n = len(g.nodes)
    conds = [
        n >= 2,
        _is_weakly_connected(g),
        _is_acyclic(g),
        all(g.in_degree(i) <= 1 for i in g.node_ids()),
        all(g.out_degree(i) <= 1 for i in g.node_ids()),
        len(g.edges) == n - 1,
    ]
    return all(conds), _score(conds)


def _check_debate(g: TopologyGraph) -> tuple[bool, float]:
    pairs = _mutual_pairs(g)
    judge = False
    for pair in pairs:
        u, v = sorted(pair)
        for j in g.node_ids():
            if j not in pair and (u, j) in g.edges and (v, j) in g.edges:
                judge = True
    conds = [len(g.nodes) >= 3, bool(pairs), judge]
    return all(conds), _score(conds)


def _check_hierarchical(g: TopologyGraph) -> tuple[bool, float]:
    best = (False, 0.0)
    for center in g.node_ids():
        others = [i for i in g.node_ids() if i != center]
        conds = [
            len(others) >= 1,
            all((center, o) in g.edges and (o, center) in g.edges for o in others),
            all(center in (s, d) for s, d in g.edges),
        ]
        candidate = (all(conds), _score(conds))
        if candidate > best:
            best = candidate
    return best


def _check_ensemble(g: TopologyGraph) -> tuple[bool, float]:
    best = (False, 0.0)
    ids = g.node_ids()
    for source in ids:
        for sink in ids:
            if sink == source:
                continue
            mids = [i for i in ids if i not in (source, sink)]
            conds = [
                len(mids) >= 2,
                g.in_degree(source) == 0,
                g.out_degree(sink) == 0,
                all((source, m) in g.edges for m in mids),
                all((m, sink) in g.edges for m in mids),
                len(g.edges) == 2 * len(mids),
            ]
            candidate = (all(conds), _score(conds))
            if candidate > best:
                best = candidate
    return best


def _check_dynamic_routing(g: TopologyGraph) -> tuple[bool, float]:
    routers = [n.id for n in g.nodes if n.type is FunctionalType.ROUTER]
    conds = [
        len(g.nodes) >= 3,
        any(g.out_degree(r) >= 2 for r in routers),
        all(g.in_degree(i) <= 1 for i in g.node_ids()),
    ]
    return all(conds), _score(conds)


#: Structural rules in priority order; first exact match wins.
_FAMILY_RULES: tuple[tuple[TopologyFamily, Callable[[TopologyGraph], tuple[bool, float]]], ...] = (
    (TopologyFamily.SINGLE, _check_single),
    (TopologyFamily.PIPELINE, _check_pipeline),
    (TopologyFamily.DEBATE, _check_debate),
    (TopologyFamily.HIERARCHICAL, _check_hierarchical),
    (TopologyFamily.ENSEMBLE, _check_ensemble),
    (TopologyFamily.DYNAMIC_ROUTING, _check_dynamic_routing),
)


def family_scores(g: TopologyGraph) -> dict[TopologyFamily, float]:
    return {family: check(g)[1] for family, check in _FAMILY_RULES}


def classify_family(g: TopologyGraph) -> TopologyFamily:
    """Total, deterministic classification: first exact structural match in
    priority order, otherwise the highest-scoring family (ties broken by the
    fixed enumeration order)."""
    scores = {}
    for family, check in _FAMILY_RULES:
        matched, score = check(g)
        if matched:
            return family
        scores[family] = score
    best_score = max(scores.values())
    for family in FAMILY_ORDER:
        if scores[family] == best_score:
            return family
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Archive
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArchiveEntry:
    graph: TopologyGraph
    family: TopologyFamily
    peak_pass_rate: float
    outer_index: int


@dataclass(frozen=True)
class DistanceRow:
    entry_index: int
    ged: float
    semantic: float
    ok: bool


@dataclass(frozen=True)
class DistinctnessReport:
    distinct: bool
    rows: tuple[DistanceRow, ...]


def is_distinct(
    candidate: TopologyGraph,
    archive: "TopologyArchive",
    cfg: RepulsionConfig | None = None,
    embedder: Embedder = type_count_vector,
) -> DistinctnessReport:
    """Dual-criteria rule: distinct iff, against every archive entry, GED >=
    delta_struct AND semantic distance >= delta_sem."""
    cfg = cfg or archive.cfg
    rows = []
    for idx, entry in enumerate(archive.entries):
        ged = graph_edit_distance(candidate, entry.graph, cfg)
        sem = semantic_distance(candidate, entry.graph, embedder)
        rows.append(DistanceRow(idx, ged, sem, ged >= cfg.delta_struct and sem >= cfg.delta_sem))
    return DistinctnessReport(all(r.ok for r in rows), tuple(rows))


def least_explored_family(archive: "TopologyArchive") -> TopologyFamily:
    counts = Counter(entry.family for entry in archive.entries)
    return min(FAMILY_ORDER, key=lambda fam: (counts.get(fam, 0), FAMILY_ORDER.index(fam)))


@dataclass
class TopologyArchive:
    """Archive of converged topologies; insertion enforces pairwise
    distinctness under the configured thresholds."""

    cfg: RepulsionConfig = field(default_factory=RepulsionConfig)
    embedder: Embedder = type_count_vector
    entries: list[ArchiveEntry] = field(default_factory=list)

    def check(self, candidate: TopologyGraph) -> DistinctnessReport:
        return is_distinct(candidate, self, self.cfg, self.embedder)

    def add(
        self,
        graph: TopologyGraph,
        family: TopologyFamily,
        peak_pass_rate: float,
        outer_index: int,
    ) -> DistinctnessReport:
        report = self.check(graph)
        if not report.distinct:
            failing = [r.entry_index for r in report.rows if not r.ok]
            raise DistinctnessError(
                f"candidate is not distinct from archive entries {failing} "
                f"(need GED >= {self.cfg.delta_struct} and semantic >= {self.cfg.delta_sem})"
            )
        self.entries.append(ArchiveEntry(graph, family, peak_pass_rate, outer_index))
        return report

    def families(self) -> list[TopologyFamily]:
        return [entry.family for entry in self.entries]

    def summary(self) -> str:
        return "; ".join(
            f"outer {e.outer_index}: {e.family.value} ({e.peak_pass_rate:.0%})"
            for e in self.entries
        )

    def to_json_dict(self) -> dict:
        return {
            "entries": [
                {
                    "graph": e.graph.to_json_dict(),
                    "family": e.family.value,
                    "peak_pass_rate": e.peak_pass_rate,
                    "outer_index": e.outer_index,
                }
                for e in self.entries
            ]
        }

    def __len__(self) -> int:
        return len(self.entries)
