"""skillloop: a trace-driven design loop for multi-agent systems.

A natural-language skill document (four sections: domain knowledge, topology
reasoning, role templates, construction protocol) is iteratively refined from
execution-trace evidence, consolidated on a fixed cadence, and diversified
across topology families by a dual-criteria distance constraint (exact graph
edit distance plus role-set cosine distance).  A deterministic bank-task
environment with a five-criterion oracle makes the whole loop runnable and
reproducible without any model in the loop.
"""

from .bank import (
    BankEnv,
    OracleVerdict,
    TaskSpec,
    WorldState,
    default_corpus,
    evaluate_oracle,
    load_corpus,
    pass_rate,
    sample_batch,
    save_corpus,
    split_tasks,
    synthetic_tasks,
)
from .doc import (
    ConsolidationReport,
    ContractSpec,
    DocDiff,
    DocStats,
    EpistemicStance,
    ParseError,
    Rule,
    RoleTemplate,
    SectionId,
    SkillDoc,
    consolidate,
    diff_stats,
    doc_stats,
    new_doc,
    parse_document,
    render_document,
    seed_transform,
)
from .evidence import (
    EvidenceClass,
    EvidenceClassifier,
    EvidenceItem,
    ExecutionTrace,
    FaultCategory,
    FaultRecord,
    SignalDecision,
    TracePair,
    Turn,
    TurnEfficiencyReport,
    TurnKind,
    classify_evidence,
    evidence_distribution,
    pair_traces,
    read_traces,
    signal_strength_check,
    turn_efficiency,
    write_traces,
)
from .graph import (
    AgentSpec,
    FunctionalType,
    GraphNode,
    RepulsionConfig,
    TopologyArchive,
    TopologyFamily,
    TopologyGraph,
    canonicalize_roles,
    classify_family,
    ged_matrix,
    graph_edit_distance,
    is_distinct,
    least_explored_family,
    semantic_distance,
)
from .meta import DeterministicMetaAgent, LlmMetaAgent, MetaAgent
from .providers import (
    CompletionRequest,
    DefaultEmbedder,
    HttpProvider,
    ProviderError,
    ScriptedPolicy,
    ScriptedProvider,
    UsageRecord,
)
from .report import RunReport, emit_report, write_report
from .runtime import (
    BuildError,
    Message,
    RunBudget,
    RunnableSystem,
    build_system,
    run_task,
    validate_contract,
)
from .search import (
    ConvergenceConfig,
    DesignSearch,
    IterationRecord,
    Runtime,
    SearchConfig,
    Signal,
    detect_convergence,
    evaluate_test,
    maybe_consolidate,
    run_inner_iteration,
    run_search,
    seed_outer_loop,
    starter_doc,
)

__version__ = "0.1.0"
