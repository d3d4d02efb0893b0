"""Input validation helpers, in the spirit of estimator check_* utilities:
validate caller-supplied structures early and raise with a precise message.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .bank import BankEnv, TaskSpec
from .doc import SECTION_ORDER, SkillDoc
from .graph import AgentSpec, SpecValidationError, TopologyGraph


def check_skill_doc(doc: SkillDoc) -> SkillDoc:
    """Structural invariants beyond what construction enforces."""
    if list(doc.sections) and set(doc.sections) != set(SECTION_ORDER):
        raise ValueError("document must carry exactly the sections K, R, T, P")
    if doc.revision < 0:
        raise ValueError("revision must be non-negative")
    seen_per_section: dict = {}
    for section, rule in doc.all_rules():
        key = (section, rule.id)
        if key in seen_per_section:
            raise ValueError(f"duplicate rule id {rule.id!r} in section {section.value}")
        seen_per_section[key] = rule
    return doc


def check_graph(graph: TopologyGraph) -> TopologyGraph:
    # TopologyGraph validates at construction; this re-checks values that may
    # have been mutated through the edges set by an adventurous caller.
    ids = set(graph.node_ids())
    for src, dst in graph.edges:
        if src == dst or src not in ids or dst not in ids:
            raise SpecValidationError(f"invalid edge ({src!r}, {dst!r})")
    return graph


def check_agent_spec(spec: AgentSpec, registry_tools: Iterable[str] | None = None) -> AgentSpec:
    spec.validate(registry_tools)
    return spec


def check_tasks(tasks: Sequence[TaskSpec], env: BankEnv | None = None) -> Sequence[TaskSpec]:
    if not tasks:
        raise ValueError("task list is empty")
    seen = set()
    for task in tasks:
        if task.task_id in seen:
            raise ValueError(f"duplicate task id {task.task_id!r}")
        seen.add(task.task_id)
        if not task.category:
            raise ValueError(f"task {task.task_id!r} has no category tag")
        if env is not None:
            tool, _ = task.target_action
            if tool not in env.registry:
                raise ValueError(f"task {task.task_id!r} targets unknown tool {tool!r}")
            if not env.registry.tools[tool].is_action:
                raise ValueError(f"task {task.task_id!r} target {tool!r} is not an action tool")
            for cid in task.constraint_ids:
                if cid not in env.constraints:
                    raise ValueError(f"task {task.task_id!r} names unknown constraint {cid!r}")
    return tasks
