"""Command-line surface.

Subcommands: ``search`` (run a configured search), ``eval`` (frozen best
configuration on the held-out test split), ``inspect`` (document stats),
``ged`` (pairwise distance matrix over spec files), ``consolidate``
(one-shot document compaction), ``report`` (tables from a run directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bank, report as report_mod
from .doc import ParseError, consolidate, doc_stats, parse_document, render_document
from .graph import (
    RepulsionConfig,
    canonicalize_roles,
    ged_matrix,
    graph_from_json_dict,
    spec_from_json_dict,
)
from .meta import DeterministicMetaAgent
from .runtime import RunBudget
from .scripts import PROFILES, ProfiledScriptProvider
from .search import (
    BestConfig,
    ConvergenceConfig,
    Runtime,
    SearchConfig,
    evaluate_test,
    load_records,
    run_search,
)

logger = logging.getLogger(__name__)

_CONFIG_KEYS = {
    "corpus",
    "profiles",
    "default_profile",
    "n_outer",
    "t_max",
    "batch_size",
    "val_size",
    "seed",
    "consolidation_interval",
    "delta_struct",
    "delta_sem",
    "c2_epsilon",
    "provider",
    "model",
    "endpoint",
    "out",
    "turn_limit",
    "action_limit",
}


class ConfigError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in data:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    profiles = data.get("profiles", {})
    for task_id, profile in profiles.items():
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r} for task {task_id!r}")
    return data


def _env_from(config: dict, corpus_flag: str | None) -> bank.BankEnv:
    corpus = corpus_flag or config.get("corpus")
    if corpus in (None, "builtin"):
        return bank.default_corpus()
    return bank.load_corpus(corpus)


def _search_config(config: dict, seed: int | None) -> SearchConfig:
    budget = RunBudget(
        turn_limit=config.get("turn_limit", 20), action_limit=config.get("action_limit", 10)
    )
    return SearchConfig(
        n_outer=config.get("n_outer", 2),
        batch_size=config.get("batch_size", 20),
        val_size=config.get("val_size", 40),
        split_seed=seed if seed is not None else config.get("seed", 42),
        consolidation_interval=config.get("consolidation_interval", 5),
        repulsion=RepulsionConfig(
            delta_struct=config.get("delta_struct", 3.0),
            delta_sem=config.get("delta_sem", 0.25),
        ),
        convergence=ConvergenceConfig(
            c2_epsilon=config.get("c2_epsilon", 0.05), t_max=config.get("t_max", 5)
        ),
        budget=budget,
    )


def _cmd_search(args) -> int:
    config = _load_config(args.config)
    if args.provider:
        config["provider"] = args.provider
    env = _env_from(config, args.corpus)
    cfg = _search_config(config, args.seed)
    out_dir = args.out or config.get("out")

    if config.get("provider", "scripted") == "http":
        from .meta import LlmMetaAgent
        from .providers import HttpProvider
        from .runtime import LlmPolicyProvider, monotonic_clock

        endpoint = config.get("endpoint")
        if not endpoint:
            raise ConfigError("http provider requires an 'endpoint' config key")
        model = config.get("model", "meta")
        provider = HttpProvider(endpoint, model)
        meta = LlmMetaAgent(provider, env, model)
        runtime = Runtime(
            policies=LlmPolicyProvider(provider, model),
            budget=cfg.budget,
            clock=monotonic_clock,
        )
    else:
        meta = DeterministicMetaAgent(env)
        policies = ProfiledScriptProvider(
            env, config.get("profiles", {}), config.get("default_profile", "golden")
        )
        runtime = Runtime(policies=policies, budget=cfg.budget)

    result = run_search(cfg, meta, env, runtime, out_dir=out_dir)
    best = result.best.record
    print(f"archive: {len(result.archive)} topologies ({', '.join(f.value for f in result.archive.families())})")
    print(f"best: o{best.outer}/i{best.inner} pass_rate={best.pass_rate:.4f} family={best.family.value}")
    if out_dir:
        records = load_records(out_dir)
        written = report_mod.write_report(report_mod.emit_report(records), Path(out_dir) / "report")
        print(f"run artifacts in {out_dir} ({len(written)} report files)")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config(args.config)
    env = _env_from(config, args.corpus)
    cfg = _search_config(config, args.seed)
    run_dir = Path(args.run_dir)
    best_meta = json.loads((run_dir / "best.json").read_text(encoding="utf-8"))
    spec = spec_from_json_dict(
        json.loads((run_dir / "best_agent_spec.json").read_text(encoding="utf-8"))
    )
    doc = parse_document((run_dir / "best_SKILL.md").read_text(encoding="utf-8"))
    validation, test = bank.split_tasks(
        env.tasks, min(cfg.val_size, len(env.tasks) - 1), cfg.split_seed
    )
    policies = ProfiledScriptProvider(
        env, config.get("profiles", {}), config.get("default_profile", "golden")
    )
    runtime = Runtime(policies=policies, budget=cfg.budget)
    from .search import IterationRecord

    rate, verdicts = evaluate_test(
        BestConfig(spec, doc, IterationRecord(best_meta["outer"], best_meta["inner"])),
        test,
        runtime,
        env,
    )
    print(f"test tasks: {len(verdicts)}")
    print(f"test pass rate: {rate:.4f}")
    for task_id, verdict in verdicts:
        flags = "".join(
            "1" if ok else "0"
            for ok in (
                verdict.c1_no_tool_errors,
                verdict.c2_no_constraint_violations,
                verdict.c3_database_match,
                verdict.c4_prerequisites_satisfied,
                verdict.c5_target_action_correct,
            )
        )
        print(f"  {task_id} c1-c5={flags} pass={'yes' if verdict.passed else 'no'}")
    return 0


def _cmd_inspect(args) -> int:
    text = Path(args.document).read_text(encoding="utf-8")
    doc = parse_document(text)
    stats = doc_stats(doc)
    print(f"revision: {doc.revision}")
    print(f"rules: {stats.rule_count}")
    print(f"words: {stats.word_count}")
    for section, count in stats.per_section_counts.items():
        print(f"  {section.value}: {count}")
    print(f"role templates: {len(doc.role_templates)}")
    for template in doc.role_templates:
        print(f"  {template.role_name} ({template.epistemic_stance.value})")
    return 0


def _load_graph_file(path: str):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "graph" in data:  # AgentSpec file: canonicalize through the classifier
        return canonicalize_roles(spec_from_json_dict(data))
    return graph_from_json_dict(data)


def _cmd_ged(args) -> int:
    graphs = [_load_graph_file(p) for p in args.files]
    matrix = ged_matrix(graphs, RepulsionConfig())
    for row in matrix:
        print(" ".join(format(cell, "g") for cell in row))
    return 0


def _cmd_consolidate(args) -> int:
    doc = parse_document(Path(args.document).read_text(encoding="utf-8"))
    out, report = consolidate(doc, args.min_citations)
    target = Path(args.out) if args.out else Path(args.document)
    target.write_text(render_document(out), encoding="utf-8")
    print(f"rules: {report.rules_before} -> {report.rules_after} (ratio {report.ratio:.2f})")
    print(f"removed: {len(report.removed_rule_ids)}, merged: {len(report.merged_groups)} groups")
    print(f"wrote {target}")
    return 0


def _cmd_report(args) -> int:
    records = load_records(args.run_dir)
    if not records:
        print(f"no iteration records under {args.run_dir}", file=sys.stderr)
        return 1
    run_report = report_mod.emit_report(records)
    out_dir = Path(args.out) if args.out else Path(args.run_dir) / "report"
    written = report_mod.write_report(run_report, out_dir)
    print(report_mod.report_to_text(run_report), end="")
    print(f"wrote {len(written)} files to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillloop",
        description="Trace-driven multi-agent design loop over a deterministic bank-task environment",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    search = sub.add_parser("search", help="run a full search from a config file")
    search.add_argument("--config", help="JSON config path")
    search.add_argument("--seed", type=int, help="override the split seed")
    search.add_argument("--out", help="run directory for artifacts")
    search.add_argument("--provider", choices=("scripted", "http"))
    search.add_argument("--corpus", help="task corpus JSON path (default: builtin)")
    search.set_defaults(func=_cmd_search)

    evaluate = sub.add_parser("eval", help="evaluate a frozen run on the test split")
    evaluate.add_argument("run_dir", help="run directory produced by search")
    evaluate.add_argument("--config", help="JSON config path")
    evaluate.add_argument("--seed", type=int)
    evaluate.add_argument("--corpus")
    evaluate.set_defaults(func=_cmd_eval)

    inspect_cmd = sub.add_parser("inspect", help="pretty-print a SKILL.md with stats")
    inspect_cmd.add_argument("document")
    inspect_cmd.set_defaults(func=_cmd_inspect)

    ged = sub.add_parser("ged", help="pairwise GED matrix over spec/graph JSON files")
    ged.add_argument("files", nargs="+")
    ged.set_defaults(func=_cmd_ged)

    consolidate_cmd = sub.add_parser("consolidate", help="one-shot consolidation of a document")
    consolidate_cmd.add_argument("document")
    consolidate_cmd.add_argument("--min-citations", type=int, default=3)
    consolidate_cmd.add_argument("--out", help="write result here instead of in place")
    consolidate_cmd.set_defaults(func=_cmd_consolidate)

    report_cmd = sub.add_parser("report", help="emit run tables from a run directory")
    report_cmd.add_argument("run_dir")
    report_cmd.add_argument("--out")
    report_cmd.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
