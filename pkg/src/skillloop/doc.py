"""Skill document: the structured design artifact that crosses every loop boundary.

The document has exactly four sections (K, R, T, P) holding natural-language
rules, plus structured role templates under T.  This module owns the bit-exact
SKILL.md dialect, canonical rendering, stats, line diffs, consolidation, and
the seed transform applied between outer search loops.

SKILL.md dialect (UTF-8, LF):

    ## K — Domain Knowledge
    - <rule text> [traces: id1,id2]
    ## R — Topology Reasoning
    ## T — Discovered Role Templates
    - <rule text>
    ```role
    name: Credit Verifier
    stance: Verifier
    prompt: <single line>
    tools: approve_credit, verify_income
    birth_trace: t42
    contract_in: request:text, account_id:text
    contract_out: decision:text, approved:boolean
    ```
    ## P — Construction Protocol

One top-level bullet is one rule; nested bullets fold into the parent rule's
text.  The citation marker is optional and omitted when a rule has no
citations.  Rule texts and template prompts are single lines and must not
contain the literal citation marker.
"""

from __future__ import annotations

import difflib
import hashlib
import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Iterator, Mapping

if TYPE_CHECKING:  # only for annotations; avoids a doc <-> graph import cycle
    from .graph import RepulsionConfig, TopologyFamily

logger = logging.getLogger(__name__)

_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")
_CITATION_MARKER = " [traces: "

SEMANTIC_TYPE_TAGS = ("text", "number", "boolean", "record", "list")

#: Nouns rejected as the final token of a role name.
GENERIC_ROLE_NOUNS = frozenset(
    {"Helper", "Agent", "Assistant", "Worker", "Manager", "Specialist"}
)

_NAME_TOKEN = r"[A-Z][A-Za-z0-9]*(?:-[A-Z][A-Za-z0-9]*)*"
ROLE_NAME_RE = re.compile(rf"^{_NAME_TOKEN} {_NAME_TOKEN}$")


class ParseError(ValueError):
    """Structured SKILL.md parse failure."""

    def __init__(self, message: str, *, field_name: str | None = None, line: int | None = None):
        self.field_name = field_name
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where)


class SectionId(str, Enum):
    K = "K"
    R = "R"
    T = "T"
    P = "P"


SECTION_ORDER = (SectionId.K, SectionId.R, SectionId.T, SectionId.P)

SECTION_TITLES = {
    SectionId.K: "Domain Knowledge",
    SectionId.R: "Topology Reasoning",
    SectionId.T: "Discovered Role Templates",
    SectionId.P: "Construction Protocol",
}


class EpistemicStance(str, Enum):
    SKEPTIC = "Skeptic"
    VERIFIER = "Verifier"
    EXPLORER = "Explorer"
    SYNTHESIZER = "Synthesizer"
    ENFORCER = "Enforcer"


def normalize_rule_text(text: str) -> str:
    """Whitespace-collapsed, casefolded form used for identity and merging."""
    return " ".join(text.split()).casefold()


def rule_id(section: SectionId, text: str) -> str:
    """Stable opaque id derived from the section and normalized text."""
    digest = hashlib.blake2s(
        f"{section.value}:{normalize_rule_text(text)}".encode("utf-8"), digest_size=4
    ).hexdigest()
    return f"{section.value.lower()}-{digest}"


@dataclass(frozen=True)
class Rule:
    id: str
    text: str
    citations: frozenset[str] = frozenset()
    created_at: int = 0

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("rule text must be non-empty")
        if "\n" in self.text:
            raise ValueError("rule text must be a single line")
        if _CITATION_MARKER in self.text:
            raise ValueError("rule text must not contain the citation marker")
        for cid in self.citations:
            if not _ID_RE.match(cid):
                raise ValueError(f"invalid trace id in citations: {cid!r}")
        if not self.citations and self.created_at != 0:
            raise ValueError("only seed rules (created_at=0) may have empty citations")

    @property
    def is_seed(self) -> bool:
        return self.created_at == 0


def make_rule(section: SectionId, text: str, citations: Iterable[str] = (), created_at: int = 0) -> Rule:
    return Rule(rule_id(section, text), text, frozenset(citations), created_at)


@dataclass(frozen=True)
class ContractSpec:
    """Required input/output fields of a role, with semantic type tags."""

    inputs: tuple[tuple[str, str], ...] = ()
    outputs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        for side, fields in (("inputs", self.inputs), ("outputs", self.outputs)):
            names = [name for name, _ in fields]
            if len(names) != len(set(names)):
                raise ValueError(f"duplicate field name in contract {side}")
            for name, tag in fields:
                if tag not in SEMANTIC_TYPE_TAGS:
                    raise ValueError(f"unknown semantic type tag {tag!r} for field {name!r}")


@dataclass(frozen=True)
class RoleTemplate:
    role_name: str
    epistemic_stance: EpistemicStance
    system_prompt: str
    tool_access: frozenset[str] = frozenset()
    birth_trace: str = ""
    interface_contract: ContractSpec = ContractSpec()

    def __post_init__(self):
        if not ROLE_NAME_RE.match(self.role_name):
            raise ValueError(
                f"role name {self.role_name!r} must be two capitalized tokens "
                "(hyphen-joined words allowed)"
            )
        noun = self.role_name.split(" ")[-1]
        if noun in GENERIC_ROLE_NOUNS:
            raise ValueError(f"role name noun {noun!r} is too generic")
        if not self.system_prompt.strip():
            raise ValueError("system prompt must be non-empty")
        if "\n" in self.system_prompt:
            raise ValueError("system prompt must be a single line")
        if not isinstance(self.epistemic_stance, EpistemicStance):
            raise ValueError(f"invalid stance {self.epistemic_stance!r}")


@dataclass(frozen=True)
class Provenance:
    outer: int = 0
    inner: int = 0
    note: str = ""


@dataclass(frozen=True)
class SkillDoc:
    """Immutable document state; every edit returns a new revision."""

    sections: Mapping[SectionId, tuple[Rule, ...]]
    role_templates: tuple[RoleTemplate, ...] = ()
    revision: int = 0
    provenance: Provenance | None = None

    def __post_init__(self):
        if set(self.sections) != set(SECTION_ORDER):
            raise ValueError("document must have exactly the four sections K, R, T, P")

    def rules(self, section: SectionId) -> tuple[Rule, ...]:
        return self.sections[section]

    def all_rules(self) -> Iterator[tuple[SectionId, Rule]]:
        for section in SECTION_ORDER:
            for rule in self.sections[section]:
                yield section, rule

    def with_rule(self, section: SectionId, rule: Rule) -> "SkillDoc":
        sections = dict(self.sections)
        sections[section] = sections[section] + (rule,)
        return replace(self, sections=sections, revision=self.revision + 1)

    def with_role_template(self, template: RoleTemplate) -> "SkillDoc":
        return replace(
            self,
            role_templates=self.role_templates + (template,),
            revision=self.revision + 1,
        )

    def structural_key(self):
        """Identity carried by the wire format: texts, citations, templates."""
        return (
            tuple(
                tuple((r.text, tuple(sorted(r.citations))) for r in self.sections[s])
                for s in SECTION_ORDER
            ),
            tuple(
                (
                    t.role_name,
                    t.epistemic_stance.value,
                    t.system_prompt,
                    tuple(sorted(t.tool_access)),
                    t.birth_trace,
                    t.interface_contract,
                )
                for t in self.role_templates
            ),
        )

    def structurally_equal(self, other: "SkillDoc") -> bool:
        return self.structural_key() == other.structural_key()


def new_doc(revision: int = 0, provenance: Provenance | None = None) -> SkillDoc:
    return SkillDoc({s: () for s in SECTION_ORDER}, (), revision, provenance)


@dataclass(frozen=True)
class DocStats:
    rule_count: int
    word_count: int
    per_section_counts: Mapping[SectionId, int]


@dataclass(frozen=True)
class DocDiff:
    lines_changed: int
    sections_touched: frozenset[SectionId]


@dataclass(frozen=True)
class ConsolidationReport:
    rules_before: int
    rules_after: int
    removed_rule_ids: tuple[str, ...]
    merged_groups: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def ratio(self) -> float:
        return self.rules_after / self.rules_before


# ---------------------------------------------------------------------------
# Parsing / rendering
# ---------------------------------------------------------------------------

_HEADER_TEXT = {s: f"## {s.value} — {SECTION_TITLES[s]}" for s in SECTION_ORDER}
_HEADER_LOOKUP = {v: k for k, v in _HEADER_TEXT.items()}

_ROLE_FIELDS = ("name", "stance", "prompt", "tools", "birth_trace", "contract_in", "contract_out")


def _parse_rule_line(line: str, section: SectionId, lineno: int) -> Rule:
    body = line[2:]
    citations: frozenset[str] = frozenset()
    if body.endswith("]") and _CITATION_MARKER in body:
        text, _, rest = body.rpartition(_CITATION_MARKER)
        ids = [tok.strip() for tok in rest[:-1].split(",") if tok.strip()]
        for cid in ids:
            if not _ID_RE.match(cid):
                raise ParseError(f"invalid trace id {cid!r}", line=lineno)
        citations = frozenset(ids)
        body = text
    if not body.strip():
        raise ParseError("empty rule text", line=lineno)
    return Rule(rule_id(section, body), body, citations, created_at=0)


def _parse_contract_side(value: str, side: str, lineno: int) -> tuple[tuple[str, str], ...]:
    value = value.strip()
    if not value:
        return ()
    fields = []
    for chunk in value.split(","):
        chunk = chunk.strip()
        if ":" not in chunk:
            raise ParseError(
                f"malformed contract entry {chunk!r}", field_name=side, line=lineno
            )
        name, _, tag = chunk.partition(":")
        fields.append((name.strip(), tag.strip()))
    return tuple(fields)


def _parse_role_block(lines: list[tuple[int, str]], start_line: int) -> RoleTemplate:
    values: dict[str, str] = {}
    for lineno, line in lines:
        if ":" not in line:
            raise ParseError(f"malformed role template line {line!r}", line=lineno)
        key, _, value = line.partition(":")
        key = key.strip()
        if key not in _ROLE_FIELDS:
            raise ParseError(f"unknown role template field {key!r}", field_name=key, line=lineno)
        if key in values:
            raise ParseError(f"duplicate role template field {key!r}", field_name=key, line=lineno)
        values[key] = value.strip() if key != "prompt" else value.lstrip(" ")
    for required in _ROLE_FIELDS:
        if required not in values:
            raise ParseError(
                f"role template missing required field {required!r}",
                field_name=required,
                line=start_line,
            )
    try:
        stance = EpistemicStance(values["stance"])
    except ValueError:
        raise ParseError(
            f"unknown stance {values['stance']!r}", field_name="stance", line=start_line
        ) from None
    tools = frozenset(t.strip() for t in values["tools"].split(",") if t.strip())
    try:
        return RoleTemplate(
            role_name=values["name"],
            epistemic_stance=stance,
            system_prompt=values["prompt"].strip(),
            tool_access=tools,
            birth_trace=values["birth_trace"],
            interface_contract=ContractSpec(
                inputs=_parse_contract_side(values["contract_in"], "contract_in", start_line),
                outputs=_parse_contract_side(values["contract_out"], "contract_out", start_line),
            ),
        )
    except ValueError as exc:
        raise ParseError(str(exc), line=start_line) from None


def parse_document(source: str) -> SkillDoc:
    """Parse SKILL.md text.  Missing section headers materialize as empty
    sections (logged as a warning); duplicate rules in a section are an error.
    """
    sections: dict[SectionId, list[Rule]] = {s: [] for s in SECTION_ORDER}
    templates: list[RoleTemplate] = []
    seen_ids: dict[SectionId, set[str]] = {s: set() for s in SECTION_ORDER}
    seen_headers: set[SectionId] = set()

    current: SectionId | None = None
    role_lines: list[tuple[int, str]] | None = None
    role_start = 0

    for lineno, raw in enumerate(source.replace("\r\n", "\n").split("\n"), start=1):
        line = raw.rstrip()
        if role_lines is not None:
            if line.strip() == "```":
                templates.append(_parse_role_block(role_lines, role_start))
                role_lines = None
            else:
                role_lines.append((lineno, line))
            continue
        if not line.strip():
            continue
        if line.startswith("## "):
            section = _HEADER_LOOKUP.get(line)
            if section is None:
                raise ParseError(f"unknown section header {line!r}", line=lineno)
            if section in seen_headers:
                raise ParseError(f"duplicate section header {line!r}", line=lineno)
            seen_headers.add(section)
            current = section
            continue
        if line.strip() == "```role":
            if current is not SectionId.T:
                raise ParseError("role template block outside section T", line=lineno)
            role_lines = []
            role_start = lineno
            continue
        if current is None:
            raise ParseError(f"content before any section header: {line!r}", line=lineno)
        if line.startswith("- "):
            rule = _parse_rule_line(line, current, lineno)
            if rule.id in seen_ids[current]:
                raise ParseError(f"duplicate rule id {rule.id!r} in section {current.value}", line=lineno)
            seen_ids[current].add(rule.id)
            sections[current].append(rule)
        else:
            # Nested bullets and wrapped prose fold into the previous rule.
            if not sections[current]:
                raise ParseError(f"content outside any rule: {line.strip()!r}", line=lineno)
            prev = sections[current][-1]
            merged = prev.text + " " + line.strip().lstrip("- ").strip()
            seen_ids[current].discard(prev.id)
            folded = Rule(rule_id(current, merged), merged, prev.citations, prev.created_at)
            if folded.id in seen_ids[current]:
                raise ParseError(f"duplicate rule id {folded.id!r} in section {current.value}", line=lineno)
            seen_ids[current].add(folded.id)
            sections[current][-1] = folded

    if role_lines is not None:
        raise ParseError("unterminated role template block", line=role_start)

    missing = [s.value for s in SECTION_ORDER if s not in seen_headers]
    if missing:
        logger.warning("document missing section headers %s; created empty", missing)

    return SkillDoc({s: tuple(rules) for s, rules in sections.items()}, tuple(templates))


def _render_rule(rule: Rule) -> str:
    if rule.citations:
        return f"- {rule.text}{_CITATION_MARKER}{','.join(sorted(rule.citations))}]"
    return f"- {rule.text}"


def _render_contract_side(fields: tuple[tuple[str, str], ...]) -> str:
    return ", ".join(f"{name}:{tag}" for name, tag in fields)


def _render_template(t: RoleTemplate) -> list[str]:
    return [
        "```role",
        f"name: {t.role_name}",
        f"stance: {t.epistemic_stance.value}",
        f"prompt: {t.system_prompt}",
        f"tools: {', '.join(sorted(t.tool_access))}",
        f"birth_trace: {t.birth_trace}",
        f"contract_in: {_render_contract_side(t.interface_contract.inputs)}",
        f"contract_out: {_render_contract_side(t.interface_contract.outputs)}",
        "```",
    ]


def render_document(doc: SkillDoc) -> str:
    """Canonical text: fixed header order, one bullet per rule, sorted
    citations, role templates as fenced blocks after T's bullets."""
    lines: list[str] = []
    for section in SECTION_ORDER:
        lines.append(_HEADER_TEXT[section])
        lines.extend(_render_rule(rule) for rule in doc.sections[section])
        if section is SectionId.T:
            for template in doc.role_templates:
                lines.extend(_render_template(template))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------


def doc_stats(doc: SkillDoc) -> DocStats:
    """Rule and word counts.  Role templates count as rules under T; words
    are whitespace tokens of rule texts and template prompts (markup and
    citation markers excluded)."""
    per_section = {s: len(doc.sections[s]) for s in SECTION_ORDER}
    per_section[SectionId.T] += len(doc.role_templates)
    words = sum(len(r.text.split()) for _, r in doc.all_rules())
    words += sum(len(t.system_prompt.split()) for t in doc.role_templates)
    return DocStats(sum(per_section.values()), words, per_section)


def diff_stats(old: SkillDoc, new: SkillDoc) -> DocDiff:
    """Line diff over canonical renderings; lines_changed = insertions + deletions."""
    old_lines = render_document(old).split("\n")
    new_lines = render_document(new).split("\n")
    changed = sum(
        1 for line in difflib.ndiff(old_lines, new_lines) if line.startswith(("- ", "+ "))
    )
    touched = {
        s
        for s in SECTION_ORDER
        if [r.text for r in old.sections[s]] != [r.text for r in new.sections[s]]
        or [frozenset(r.citations) for r in old.sections[s]]
        != [frozenset(r.citations) for r in new.sections[s]]
    }
    if old.role_templates != new.role_templates:
        touched.add(SectionId.T)
    return DocDiff(changed, frozenset(touched))


# ---------------------------------------------------------------------------
# Consolidation
# ---------------------------------------------------------------------------


def consolidate(doc: SkillDoc, min_citations: int = 3) -> tuple[SkillDoc, ConsolidationReport]:
    """Deterministic default consolidator.

    Within each section, rules with identical normalized text merge into the
    earliest rule (by created_at, then position), which absorbs the union of
    citations; then non-seed rules with fewer than ``min_citations`` citations
    are removed.  Role templates are never removed.
    """
    before = doc_stats(doc).rule_count
    if before == 0:
        raise ValueError("nothing to consolidate: document has no rules")

    merged_groups: list[tuple[str, tuple[str, ...]]] = []
    removed: list[str] = []
    sections: dict[SectionId, tuple[Rule, ...]] = {}

    for section in SECTION_ORDER:
        groups: dict[str, list[tuple[int, Rule]]] = {}
        for pos, rule in enumerate(doc.sections[section]):
            groups.setdefault(normalize_rule_text(rule.text), []).append((pos, rule))

        survivors: list[tuple[int, Rule]] = []
        for members in groups.values():
            lead_pos, lead = min(members, key=lambda pr: (pr[1].created_at, pr[0]))
            absorbed = [r for p, r in members if (p, r) != (lead_pos, lead)]
            if absorbed:
                citations = lead.citations.union(*(r.citations for r in absorbed))
                lead = replace(lead, citations=citations)
                merged_groups.append((lead.id, tuple(r.id for r in absorbed)))
            survivors.append((lead_pos, lead))

        kept: list[Rule] = []
        for _, rule in sorted(survivors):
            if not rule.is_seed and len(rule.citations) < min_citations:
                removed.append(rule.id)
            else:
                kept.append(rule)
        sections[section] = tuple(kept)

    out = replace(doc, sections=sections, revision=doc.revision + 1)
    report = ConsolidationReport(
        rules_before=before,
        rules_after=doc_stats(out).rule_count,
        removed_rule_ids=tuple(removed),
        merged_groups=tuple(merged_groups),
    )
    return out, report


# ---------------------------------------------------------------------------
# Outer-loop seeding
# ---------------------------------------------------------------------------

REPULSION_RULE_ID = "r-repulsion"


def _fmt(x: float) -> str:
    return format(x, "g")


def seed_transform(
    doc: SkillDoc,
    target_family: "TopologyFamily",
    repulsion: "RepulsionConfig",
    archive_summary: str = "",
) -> SkillDoc:
    """Seed document for a fresh outer loop: K preserved verbatim (rules
    become seeds of the new loop), T cleared, R receives a repulsion
    constraint naming the target family and both distance thresholds,
    P preserved, revision reset to 0."""
    text = (
        f"Target the {target_family.value} topology family; the converged design "
        f"must differ from every archived topology by graph edit distance "
        f">= {_fmt(repulsion.delta_struct)} and role-set cosine distance "
        f">= {_fmt(repulsion.delta_sem)}."
    )
    if archive_summary:
        text += f" Archive so far: {archive_summary}."
    injected = Rule(REPULSION_RULE_ID, text, frozenset(), created_at=0)

    sections = {
        SectionId.K: tuple(replace(r, created_at=0) for r in doc.sections[SectionId.K]),
        SectionId.R: tuple(r for r in doc.sections[SectionId.R] if r.id != REPULSION_RULE_ID)
        + (injected,),
        SectionId.T: (),
        SectionId.P: doc.sections[SectionId.P],
    }
    note = f"seeded from revision {doc.revision}"
    if doc.provenance:
        note = f"seeded from outer {doc.provenance.outer} inner {doc.provenance.inner}"
    return SkillDoc(sections, (), revision=0, provenance=Provenance(note=note))
