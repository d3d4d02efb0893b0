"""The design loop: inner trace-driven refinement, convergence detection,
consolidation cadence, and the outer topology-diversity search.

Only the skill document crosses iteration boundaries.  Each inner iteration
runs BUILD -> RUN -> ANALYZE -> UPDATE; the inner loop ends when weighted
convergence signals reach the termination threshold or the hard cap; each
outer loop seeds a fresh document that preserves domain knowledge, clears
role templates, and repels the search away from archived topologies.
"""

from __future__ import annotations

import inspect
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from .bank import BankEnv, OracleVerdict, TaskSpec, evaluate_oracle, pass_rate, sample_batch, split_tasks
from .doc import (
    DocDiff,
    DocStats,
    Provenance,
    SectionId,
    SkillDoc,
    consolidate,
    diff_stats,
    doc_stats,
    make_rule,
    new_doc,
    render_document,
    seed_transform,
)
from .evidence import (
    EvidenceClass,
    EvidenceItem,
    RoleDraft,
    SignalDecision,
    pair_traces,
    signal_strength_check,
    turn_efficiency,
    write_traces,
)
from .graph import (
    AgentSpec,
    RepulsionConfig,
    SpecValidationError,
    TopologyArchive,
    TopologyFamily,
    canonicalize_roles,
    classify_family,
    least_explored_family,
)
from .meta import MetaAgent, MetaAgentError
from .providers import UsageRecord
from .runtime import BuildError, Clock, PolicyProvider, RunBudget, build_system, run_task, zero_clock

logger = logging.getLogger(__name__)


class Signal(str, Enum):
    C1 = "C1"  # document stabilized: tiny diff
    C2 = "C2"  # pass-rate plateau
    C3 = "C3"  # actionable evidence exhausted
    C4 = "C4"  # rule bloat


@dataclass(frozen=True)
class ConvergenceConfig:
    c1_line_threshold: int = 5
    c2_epsilon: float = 0.05
    c2_window: int = 3
    c3_fraction: float = 0.10
    c4_rule_threshold: int = 200
    weights: Mapping[Signal, int] = field(
        default_factory=lambda: {Signal.C1: 2, Signal.C2: 2, Signal.C3: 1, Signal.C4: 1}
    )
    termination_weight: int = 3
    t_max: int = 8

    def __post_init__(self):
        if not 1 <= self.t_max <= 15:
            raise ValueError("t_max must be between 1 and 15")
        if self.termination_weight <= 0 or any(w <= 0 for w in self.weights.values()):
            raise ValueError("weights and termination threshold must be positive")


@dataclass(frozen=True)
class SearchConfig:
    n_outer: int = 3
    batch_size: int = 20
    val_size: int = 40
    split_seed: int = 42
    batch_seed_base: int = 1000
    consolidation_interval: int = 5
    repulsion: RepulsionConfig = field(default_factory=RepulsionConfig)
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)
    budget: RunBudget = field(default_factory=RunBudget)

    def __post_init__(self):
        if self.n_outer < 1:
            raise ValueError("n_outer must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass(frozen=True)
class EpisodeStats:
    task_id: str
    trace_id: str
    turns: int
    tool_turns: int
    actions: int
    tokens: int
    hit_turn_limit: bool
    passed: bool


@dataclass(frozen=True)
class IterationRecord:
    outer: int
    inner: int
    attempt: int = 1
    pass_rate: float = 0.0
    family: TopologyFamily = TopologyFamily.SINGLE
    stats: DocStats | None = None
    ec_counts: Mapping[str, int] = field(default_factory=dict)
    signals: frozenset[Signal] = frozenset()
    weak_signal: bool = False
    build_failed: bool = False
    diagnostic: str = ""
    consolidation: "ConsolidationSummary | None" = None
    spec: AgentSpec | None = None
    usage: UsageRecord = field(default_factory=UsageRecord)
    episodes: tuple[EpisodeStats, ...] = ()
    batch_task_ids: tuple[str, ...] = ()
    doc_before: SkillDoc | None = None
    doc_after: SkillDoc | None = None

    def to_json_dict(self) -> dict:
        return {
            "outer": self.outer,
            "inner": self.inner,
            "attempt": self.attempt,
            "pass_rate": self.pass_rate,
            "family": self.family.value,
            "agents": len(self.spec.graph.nodes) if self.spec else 0,
            "rules": self.stats.rule_count if self.stats else 0,
            "words": self.stats.word_count if self.stats else 0,
            "per_section": {s.value: n for s, n in self.stats.per_section_counts.items()}
            if self.stats
            else {},
            "ec_counts": dict(sorted(self.ec_counts.items())),
            "signals": sorted(s.value for s in self.signals),
            "weak_signal": self.weak_signal,
            "build_failed": self.build_failed,
            "diagnostic": self.diagnostic,
            "consolidation": self.consolidation.to_json_dict() if self.consolidation else None,
            "usage": self.usage.to_json_dict(),
            "episodes": [
                {
                    "task_id": e.task_id,
                    "trace_id": e.trace_id,
                    "turns": e.turns,
                    "tool_turns": e.tool_turns,
                    "actions": e.actions,
                    "tokens": e.tokens,
                    "hit_turn_limit": e.hit_turn_limit,
                    "passed": e.passed,
                }
                for e in self.episodes
            ],
            "batch_task_ids": list(self.batch_task_ids),
            "spec": self.spec.to_json_dict() if self.spec else None,
        }


@dataclass(frozen=True)
class ConsolidationSummary:
    rules_before: int
    rules_after: int
    removed: int
    merged: int

    @property
    def ratio(self) -> float:
        return self.rules_after / self.rules_before

    def to_json_dict(self) -> dict:
        return {
            "rules_before": self.rules_before,
            "rules_after": self.rules_after,
            "removed": self.removed,
            "merged": self.merged,
            "ratio": round(self.ratio, 4),
        }


@dataclass
class Runtime:
    """Execution collaborator handed to the loop: policy bindings plus
    budgets and the clock used for wall accounting."""

    policies: PolicyProvider
    budget: RunBudget = field(default_factory=RunBudget)
    clock: Clock = zero_clock


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------


def signal_weight(signals: frozenset[Signal] | set[Signal], cfg: ConvergenceConfig) -> int:
    return sum(cfg.weights[s] for s in signals)


def converged_by(signals, inner_index: int, cfg: ConvergenceConfig) -> bool:
    return signal_weight(signals, cfg) >= cfg.termination_weight or inner_index >= cfg.t_max


def detect_convergence(
    history: Sequence[IterationRecord], current_diff: DocDiff, cfg: ConvergenceConfig
) -> tuple[frozenset[Signal], bool]:
    """Evaluate C1-C4 over the iteration history (last record = current) and
    decide termination by weighted sum or hard cap."""
    if not history:
        raise ValueError("detect_convergence requires at least one record")
    current = history[-1]
    signals: set[Signal] = set()
    if current_diff.lines_changed < cfg.c1_line_threshold:
        signals.add(Signal.C1)
    if len(history) >= cfg.c2_window:
        window = [r.pass_rate for r in history[-cfg.c2_window :]]
        if max(window) - min(window) < cfg.c2_epsilon:
            signals.add(Signal.C2)
    total_evidence = sum(current.ec_counts.values())
    if total_evidence >= 1:
        actionable = current.ec_counts.get("EC1", 0) + current.ec_counts.get("EC2", 0)
        if actionable / total_evidence < cfg.c3_fraction:
            signals.add(Signal.C3)
    if current.stats is not None and current.stats.rule_count > cfg.c4_rule_threshold:
        signals.add(Signal.C4)
    return frozenset(signals), converged_by(signals, current.inner, cfg)


def maybe_consolidate(
    doc: SkillDoc, inner_index: int, signals: frozenset[Signal], k: int = 5
) -> tuple[SkillDoc, ConsolidationSummary | None]:
    """Consolidation cadence: every k-th inner iteration, or whenever C4
    fires.  Runs after UPDATE, so its effect shows in the next iteration's
    document stats."""
    if inner_index % k != 0 and Signal.C4 not in signals:
        return doc, None
    out, report = consolidate(doc)
    summary = ConsolidationSummary(
        report.rules_before,
        report.rules_after,
        removed=len(report.removed_rule_ids),
        merged=sum(len(absorbed) for _, absorbed in report.merged_groups),
    )
    return out, summary


# ---------------------------------------------------------------------------
# Inner iteration
# ---------------------------------------------------------------------------


def starter_doc(env: BankEnv) -> SkillDoc:
    """Minimal seed document: a few domain facts and a two-step protocol."""
    doc = new_doc()
    for text in (
        "verify account ownership before balance modification",
        "every mutating operation requires an authenticated session for the owner",
        "credit approvals follow income verification, scoring, and limit setting in order",
        "frozen accounts accept no balance changes until unfrozen",
    ):
        doc = doc.with_rule(SectionId.K, make_rule(SectionId.K, text))
    for text in (
        "give each agent the narrowest tool set that still covers its duties",
        "route every task from the entry node and finish at the exit node",
    ):
        doc = doc.with_rule(SectionId.P, make_rule(SectionId.P, text))
    return replace(doc, revision=0)


def run_inner_iteration(
    doc: SkillDoc,
    meta: MetaAgent,
    env: BankEnv,
    runtime: Runtime,
    batch: Sequence[TaskSpec],
    outer: int = 1,
    inner: int = 1,
    attempt: int = 1,
) -> tuple[SkillDoc, IterationRecord, list]:
    """One BUILD -> RUN -> ANALYZE -> UPDATE pass over a task batch.

    Returns the updated document, the iteration record, and the oracle-tagged
    traces (for persistence).  A weak evidence signal skips UPDATE; a build
    failure aborts the iteration with a diagnostic record.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    doc = replace(doc, provenance=Provenance(outer, inner))
    base = IterationRecord(outer=outer, inner=inner, attempt=attempt, doc_before=doc, doc_after=doc)
    usage_before = getattr(meta, "usage", None)

    try:
        spec = meta.build(doc)
        system = build_system(spec, runtime.policies, env)
    except (MetaAgentError, SpecValidationError, BuildError) as exc:
        logger.warning("build failed at o%si%s: %s", outer, inner, exc)
        record = replace(
            base, build_failed=True, diagnostic=str(exc), stats=doc_stats(doc)
        )
        return doc, record, []

    prefix = f"o{outer}i{inner}" + (f"r{attempt}" if attempt > 1 else "")
    traces = []
    verdicts: list[OracleVerdict] = []
    episodes = []
    tokens = 0
    for task in batch:
        trace, final_state = run_task(
            system, task, runtime.budget, trace_id=f"{prefix}-{task.task_id}", clock=runtime.clock
        )
        verdict = evaluate_oracle(env, task, trace, final_state)
        trace = trace.with_outcome(verdict)
        traces.append(trace)
        verdicts.append(verdict)
        efficiency = turn_efficiency(trace, runtime.budget.turn_limit)
        episodes.append(
            EpisodeStats(
                task_id=task.task_id,
                trace_id=trace.trace_id,
                turns=efficiency.total_turns,
                tool_turns=efficiency.tool_call_turns,
                actions=trace.budget_usage.actions,
                tokens=trace.budget_usage.tokens,
                hit_turn_limit=efficiency.hit_turn_limit,
                passed=verdict.passed,
            )
        )
        tokens += trace.budget_usage.tokens

    rate = pass_rate(verdicts)
    failed = [t for t in traces if not t.outcome.passed]
    succeeded = [t for t in traces if t.outcome.passed]
    pairs = pair_traces(failed, succeeded)
    items = meta.analyze(pairs)
    ec_counts = {ec.value: sum(1 for i in items if i.ec is ec) for ec in EvidenceClass}

    decision = signal_strength_check(items)
    weak = decision is SignalDecision.ABORT
    new_doc_state = doc
    if not weak:
        prepared: list[EvidenceItem] = []
        for item in items:
            if item.ec is EvidenceClass.EC3 and not isinstance(item.proposed_edit, RoleDraft):
                template = meta.synthesize_role(item)
                item = replace(item, proposed_edit=RoleDraft(template))
            prepared.append(item)
        new_doc_state = meta.update(doc, prepared)

    usage_after = getattr(meta, "usage", None)
    meta_delta = UsageRecord()
    if isinstance(usage_before, UsageRecord) and isinstance(usage_after, UsageRecord):
        meta_delta = UsageRecord(
            usage_after.prompt_tokens - usage_before.prompt_tokens,
            usage_after.completion_tokens - usage_before.completion_tokens,
            usage_after.calls - usage_before.calls,
            usage_after.wall_ms - usage_before.wall_ms,
        )
    record = replace(
        base,
        pass_rate=rate,
        family=classify_family(canonicalize_roles(spec)),
        stats=doc_stats(new_doc_state),
        ec_counts=ec_counts,
        weak_signal=weak,
        spec=spec,
        usage=UsageRecord(completion_tokens=tokens, calls=len(batch)).merge(meta_delta),
        episodes=tuple(episodes),
        batch_task_ids=tuple(t.task_id for t in batch),
        doc_after=new_doc_state,
    )
    return new_doc_state, record, traces


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


def seed_outer_loop(prev_doc: SkillDoc, archive: TopologyArchive, cfg: SearchConfig) -> SkillDoc:
    family = least_explored_family(archive)
    return seed_transform(prev_doc, family, cfg.repulsion, archive.summary())


def _seed_avoiding(
    prev_doc: SkillDoc, archive: TopologyArchive, cfg: SearchConfig, avoid: TopologyFamily
) -> SkillDoc:
    from collections import Counter

    counts = Counter(archive.families())
    candidates = [f for f in TopologyFamily if f is not avoid]
    family = min(candidates, key=lambda f: (counts.get(f, 0), list(TopologyFamily).index(f)))
    summary = archive.summary()
    if summary:
        summary += f"; avoid the {avoid.value} family"
    else:
        summary = f"avoid the {avoid.value} family"
    return seed_transform(prev_doc, family, cfg.repulsion, summary)


@dataclass(frozen=True)
class BestConfig:
    spec: AgentSpec
    doc: SkillDoc
    record: IterationRecord


@dataclass
class SearchResult:
    archive: TopologyArchive
    records: list[IterationRecord]
    best: BestConfig
    validation: list[TaskSpec]
    test: list[TaskSpec]
    collisions: list[str] = field(default_factory=list)


def run_search(
    cfg: SearchConfig,
    meta: MetaAgent,
    env: BankEnv,
    runtime: Runtime,
    initial_doc: SkillDoc | None = None,
    out_dir: str | Path | None = None,
) -> SearchResult:
    """Full outer/inner search over the environment's task corpus.

    Tasks are split once (stratified, seeded); every iteration samples a
    validation batch, and the best configuration is the iteration with peak
    validation pass rate (earliest wins ties).  Converged topologies enter
    the archive only if distinct; a rejected candidate triggers one re-seed
    that explicitly avoids the colliding family, then the collision is
    recorded and the search moves on.
    """
    validation, test = split_tasks(env.tasks, min(cfg.val_size, len(env.tasks) - 1), cfg.split_seed)
    archive = TopologyArchive(cfg.repulsion)
    records: list[IterationRecord] = []
    collisions: list[str] = []
    doc = initial_doc if initial_doc is not None else starter_doc(env)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    for outer in range(1, cfg.n_outer + 1):
        attempt = 1
        seed_doc = seed_outer_loop(doc, archive, cfg)
        while True:
            if out_path is not None:
                seed_dir = out_path / f"o{outer}" / ("seed" if attempt == 1 else f"seed-r{attempt}")
                seed_dir.mkdir(parents=True, exist_ok=True)
                (seed_dir / "SKILL.md").write_text(render_document(seed_doc), encoding="utf-8")
            inner_records: list[IterationRecord] = []
            current = seed_doc
            for inner in range(1, cfg.convergence.t_max + 1):
                batch = sample_batch(
                    validation,
                    min(cfg.batch_size, len(validation)),
                    cfg.batch_seed_base + outer * 100 + inner,
                )
                before = current
                current, record, traces = run_inner_iteration(
                    current, meta, env, runtime, batch, outer, inner, attempt
                )
                if record.build_failed:
                    inner_records.append(record)
                    if out_path is not None:
                        _persist_iteration(out_path, record, traces)
                    break
                diff = diff_stats(before, current)
                signals, converged = detect_convergence(
                    inner_records + [record], diff, cfg.convergence
                )
                current, summary = maybe_consolidate(
                    current, inner, signals, cfg.consolidation_interval
                )
                record = replace(record, signals=signals, consolidation=summary, doc_after=current)
                inner_records.append(record)
                if out_path is not None:
                    _persist_iteration(out_path, record, traces)
                if converged:
                    break

            records.extend(inner_records)
            last_spec = next(
                (r.spec for r in reversed(inner_records) if r.spec is not None), None
            )
            if last_spec is None:
                logger.warning("outer loop %d produced no buildable system", outer)
                doc = current
                break
            candidate = canonicalize_roles(last_spec)
            family = classify_family(candidate)
            check = archive.check(candidate)
            if check.distinct:
                peak = max((r.pass_rate for r in inner_records), default=0.0)
                archive.add(candidate, family, peak, outer)
                doc = current
                break
            if attempt == 1:
                logger.info(
                    "outer %d candidate (%s) collided with archive; re-seeding once",
                    outer,
                    family.value,
                )
                attempt += 1
                seed_doc = _seed_avoiding(doc, archive, cfg, family)
                continue
            collisions.append(
                f"outer {outer}: {family.value} candidate not distinct after re-seed"
            )
            doc = current
            break

    usable = [r for r in records if not r.build_failed]
    best_record = max(usable, key=lambda r: r.pass_rate) if usable else records[-1]
    # max() keeps the first maximum, which is exactly the earliest-wins tie-break
    best = BestConfig(best_record.spec, best_record.doc_before, best_record)
    result = SearchResult(archive, records, best, list(validation), list(test), collisions)
    if out_path is not None:
        _persist_search(out_path, cfg, result)
    return result


def evaluate_test(
    best: BestConfig,
    tasks: Sequence[TaskSpec],
    runtime: Runtime,
    env: BankEnv,
) -> tuple[float, list[tuple[str, OracleVerdict]]]:
    """Single frozen evaluation pass: no document edits, no sampling."""
    revision_before = best.doc.revision
    system = build_system(best.spec, runtime.policies, env)
    verdicts = []
    for task in tasks:
        trace, final_state = run_task(
            system, task, runtime.budget, trace_id=f"test-{task.task_id}", clock=runtime.clock
        )
        verdicts.append((task.task_id, evaluate_oracle(env, task, trace, final_state)))
    assert best.doc.revision == revision_before
    return pass_rate([v for _, v in verdicts]), verdicts


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _iteration_dir(out: Path, record: IterationRecord) -> Path:
    outer = f"o{record.outer}" if record.attempt == 1 else f"o{record.outer}r{record.attempt}"
    return out / outer / f"i{record.inner}"


def _persist_iteration(out: Path, record: IterationRecord, traces) -> None:
    folder = _iteration_dir(out, record)
    folder.mkdir(parents=True, exist_ok=True)
    (folder / "SKILL.md").write_text(render_document(record.doc_after), encoding="utf-8")
    if record.spec is not None:
        _dump_json(folder / "agent_spec.json", record.spec.to_json_dict())
    _dump_json(folder / "record.json", record.to_json_dict())
    if traces:
        write_traces(traces, folder / "traces.jsonl")


def _persist_search(out: Path, cfg: SearchConfig, result: SearchResult) -> None:
    _dump_json(out / "archive.json", result.archive.to_json_dict())
    best = result.best.record
    _dump_json(
        out / "best.json",
        {
            "outer": best.outer,
            "inner": best.inner,
            "attempt": best.attempt,
            "pass_rate": best.pass_rate,
            "family": best.family.value,
            "path": str(_iteration_dir(Path(""), best)).lstrip("/"),
        },
    )
    (out / "best_SKILL.md").write_text(render_document(result.best.doc), encoding="utf-8")
    _dump_json(out / "best_agent_spec.json", result.best.spec.to_json_dict())
    _dump_json(
        out / "split.json",
        {
            "validation": [t.task_id for t in result.validation],
            "test": [t.task_id for t in result.test],
            "collisions": result.collisions,
        },
    )


def load_records(run_dir: str | Path) -> list[dict]:
    """Read persisted iteration records back, ordered by (outer, attempt, inner)."""
    run_dir = Path(run_dir)
    found = []
    for record_file in run_dir.glob("o*/i*/record.json"):
        data = json.loads(record_file.read_text(encoding="utf-8"))
        found.append(data)
    found.sort(key=lambda r: (r["outer"], r["attempt"], r["inner"]))
    return found


# ---------------------------------------------------------------------------
# Estimator facade
# ---------------------------------------------------------------------------


class DesignSearch:
    """Estimator-style facade: ``fit`` runs the search on a task corpus,
    ``score`` evaluates the frozen best configuration on held-out tasks.

    Follows scikit-learn conventions (constructor stores parameters verbatim;
    learned state lands in trailing-underscore attributes; ``get_params`` /
    ``set_params`` make it clone-compatible) without depending on sklearn.
    """

    def __init__(
        self,
        n_outer: int = 2,
        t_max: int = 5,
        batch_size: int = 20,
        val_size: int = 40,
        seed: int = 42,
        consolidation_interval: int = 5,
        delta_struct: float = 3.0,
        delta_sem: float = 0.25,
        c2_epsilon: float = 0.05,
        meta: MetaAgent | None = None,
        policies: PolicyProvider | None = None,
        env: BankEnv | None = None,
        out_dir: str | None = None,
    ):
        self.n_outer = n_outer
        self.t_max = t_max
        self.batch_size = batch_size
        self.val_size = val_size
        self.seed = seed
        self.consolidation_interval = consolidation_interval
        self.delta_struct = delta_struct
        self.delta_sem = delta_sem
        self.c2_epsilon = c2_epsilon
        self.meta = meta
        self.policies = policies
        self.env = env
        self.out_dir = out_dir

    # -- sklearn-style parameter plumbing ------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        signature = inspect.signature(cls.__init__)
        return [p for p in signature.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "DesignSearch":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for DesignSearch")
            setattr(self, name, value)
        return self

    # -- fitting ---------------------------------------------------------------

    def _build_config(self, n_tasks: int) -> SearchConfig:
        return SearchConfig(
            n_outer=self.n_outer,
            batch_size=self.batch_size,
            val_size=min(self.val_size, max(1, n_tasks - 1)),
            split_seed=self.seed,
            consolidation_interval=self.consolidation_interval,
            repulsion=RepulsionConfig(delta_struct=self.delta_struct, delta_sem=self.delta_sem),
            convergence=ConvergenceConfig(c2_epsilon=self.c2_epsilon, t_max=self.t_max),
        )

    def fit(self, tasks: Sequence[TaskSpec] | None = None) -> "DesignSearch":
        from .bank import default_corpus
        from .meta import DeterministicMetaAgent
        from .scripts import ProfiledScriptProvider

        base_env = self.env if self.env is not None else default_corpus()
        env = base_env if tasks is None else replace(base_env, tasks=tuple(tasks))
        meta = self.meta if self.meta is not None else DeterministicMetaAgent(env)
        policies = self.policies if self.policies is not None else ProfiledScriptProvider(env)
        cfg = self._build_config(len(env.tasks))
        runtime = Runtime(policies=policies, budget=cfg.budget)
        result = run_search(cfg, meta, env, runtime, out_dir=self.out_dir)

        self.env_ = env
        self.runtime_ = runtime
        self.config_ = cfg
        self.archive_ = result.archive
        self.records_ = result.records
        self.best_spec_ = result.best.spec
        self.best_doc_ = result.best.doc
        self.best_record_ = result.best.record
        self.validation_tasks_ = result.validation
        self.test_tasks_ = result.test
        self.collisions_ = result.collisions
        return self

    def score(self, tasks: Sequence[TaskSpec] | None = None) -> float:
        if not hasattr(self, "best_spec_"):
            raise RuntimeError("DesignSearch is not fitted; call fit() first")
        target = list(tasks) if tasks is not None else self.test_tasks_
        rate, _ = evaluate_test(
            BestConfig(self.best_spec_, self.best_doc_, self.best_record_),
            target,
            self.runtime_,
            self.env_,
        )
        return rate
