"""Run reports: trajectory, evidence distribution, growth/consolidation, and
resource tables rendered from persisted iteration records.

Every number is recomputed from the records, so re-rendering the same run
directory is byte-identical.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

EC_NAMES = ("EC1", "EC2", "EC3", "EC4", "EC5")

Table = list[list[str]]


@dataclass(frozen=True)
class RunReport:
    trajectory: Table
    evidence: Table
    growth: Table
    resources: Table
    efficiency: Table

    def tables(self) -> dict[str, Table]:
        return {
            "trajectory": self.trajectory,
            "evidence": self.evidence,
            "growth": self.growth,
            "resources": self.resources,
            "efficiency": self.efficiency,
        }


def _fmt_rate(rate: float) -> str:
    return f"{rate * 100:.2f}%"


def _trajectory_table(records: Sequence[Mapping]) -> Table:
    table = [["outer", "inner", "pass_rate", "family", "agents", "rules", "words"]]
    for r in records:
        table.append(
            [
                str(r["outer"]),
                str(r["inner"]),
                _fmt_rate(r["pass_rate"]),
                r["family"],
                str(r["agents"]),
                str(r["rules"]),
                str(r["words"]),
            ]
        )
    return table


def _evidence_table(records: Sequence[Mapping]) -> Table:
    table = [["outer", *EC_NAMES, "total"]]
    outers = sorted({r["outer"] for r in records})
    totals = {ec: 0 for ec in EC_NAMES}
    for outer in outers:
        row_counts = {ec: 0 for ec in EC_NAMES}
        for r in records:
            if r["outer"] == outer:
                for ec in EC_NAMES:
                    row_counts[ec] += r["ec_counts"].get(ec, 0)
        for ec in EC_NAMES:
            totals[ec] += row_counts[ec]
        table.append(
            [f"O{outer}", *(str(row_counts[ec]) for ec in EC_NAMES), str(sum(row_counts.values()))]
        )
    table.append(["total", *(str(totals[ec]) for ec in EC_NAMES), str(sum(totals.values()))])
    return table


def _growth_table(records: Sequence[Mapping]) -> Table:
    table = [
        ["outer", "rules_start", "rules_end", "words_start", "words_end", "ratio", "pre", "post"]
    ]
    outers = sorted({r["outer"] for r in records})
    for outer in outers:
        rows = [r for r in records if r["outer"] == outer]
        consolidations = [r["consolidation"] for r in rows if r.get("consolidation")]
        ratio = pre = post = ""
        if consolidations:
            last = consolidations[-1]
            if last["rules_before"]:
                ratio = f"{last['rules_after'] / last['rules_before']:.2f}"
            pre, post = str(last["rules_before"]), str(last["rules_after"])
        table.append(
            [
                f"O{outer}",
                str(rows[0]["rules"]),
                str(rows[-1]["rules"]),
                str(rows[0]["words"]),
                str(rows[-1]["words"]),
                ratio,
                pre,
                post,
            ]
        )
    return table


def _resources_table(records: Sequence[Mapping]) -> Table:
    tokens = sum(
        r["usage"]["prompt_tokens"] + r["usage"]["completion_tokens"] for r in records
    )
    calls = sum(r["usage"]["calls"] for r in records)
    wall_ms = sum(r["usage"]["wall_ms"] for r in records)
    n = len(records)
    return [
        ["metric", "value"],
        ["total_iterations", str(n)],
        ["cumulative_tokens", str(tokens)],
        ["cumulative_api_calls", str(calls)],
        ["avg_tokens_per_iteration", str(round(tokens / n)) if n else "0"],
        ["avg_api_calls_per_iteration", str(round(calls / n)) if n else "0"],
        ["cumulative_wall_ms", str(wall_ms)],
    ]


def _efficiency_table(records: Sequence[Mapping]) -> Table:
    episodes = [e for r in records for e in r.get("episodes", ())]
    table = [["metric", "value"]]
    if not episodes:
        table.append(["episodes", "0"])
        return table
    efficiencies = [e["tool_turns"] / e["turns"] for e in episodes if e["turns"]]
    mean_eff = sum(efficiencies) / len(efficiencies) if efficiencies else 0.0
    hits = sum(1 for e in episodes if e["hit_turn_limit"])
    table.extend(
        [
            ["episodes", str(len(episodes))],
            ["mean_turn_efficiency", f"{mean_eff:.4f}"],
            ["turn_limit_hit_fraction", f"{hits / len(episodes):.4f}"],
        ]
    )
    return table


def emit_report(records: Sequence[Mapping]) -> RunReport:
    """Render the report tables from iteration record dicts (the persisted
    record.json payloads, or IterationRecord.to_json_dict() output)."""
    if not records:
        raise ValueError("emit_report requires at least one record")
    return RunReport(
        trajectory=_trajectory_table(records),
        evidence=_evidence_table(records),
        growth=_growth_table(records),
        resources=_resources_table(records),
        efficiency=_efficiency_table(records),
    )


def table_to_csv(table: Table) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows(table)
    return buffer.getvalue()


def table_to_text(table: Table) -> str:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = []
    for idx, row in enumerate(table):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def report_to_text(report: RunReport) -> str:
    parts = []
    for name, table in report.tables().items():
        parts.append(f"== {name} ==")
        parts.append(table_to_text(table))
    return "\n".join(parts)


def write_report(report: RunReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in report.tables().items():
        path = out / f"{name}.csv"
        path.write_text(table_to_csv(table), encoding="utf-8")
        written.append(path)
    text_path = out / "report.txt"
    text_path.write_text(report_to_text(report), encoding="utf-8")
    written.append(text_path)
    return written
