"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import pipeline, verifier
from .library import load_library, stats
from .provider import TemplateName, load_templates
from .records import read_jsonl


def _load_config(args: argparse.Namespace) -> pipeline.PipelineConfig:
    config = pipeline.PipelineConfig.from_file(args.config)
    if args.seed is not None:
        config.rng_seed = args.seed
    if args.mock_provider is not None:
        config.provider.kind = "mock"
        config.provider.fixtures_dir = str(Path(args.mock_provider).resolve())
        for settings in config.provider_overrides.values():
            settings.kind = "mock"
            settings.fixtures_dir = config.provider.fixtures_dir
    return config


def cmd_decompose(args: argparse.Namespace) -> int:
    manifest = pipeline.run_decompose(_load_config(args))
    print(json.dumps(manifest.get("filtered", {}), sort_keys=True))
    print(f"decompose: {manifest['output_count']}/{manifest['input_count']} graphs accepted")
    return 0


def cmd_label_merge(args: argparse.Namespace) -> int:
    manifest = pipeline.run_label_and_merge(_load_config(args))
    merge = manifest["merge"]
    print(f"label-merge: {merge['functions_before']} functions -> {merge['nodes_after']} nodes (rate {merge['merge_rate']:.4f})")
    return 0


def cmd_build_library(args: argparse.Namespace) -> int:
    manifest = pipeline.run_build_library(_load_config(args))
    print(f"build-library: {manifest['output_count']} nodes, {manifest['edge_count']} edges")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    config = _load_config(args)
    lib_path = Path(config.output_dir) / pipeline.STAGE_LIBRARY / "library.json"
    print(stats(load_library(lib_path)).render_table(), end="")
    return 0


def cmd_synthesize(args: argparse.Namespace) -> int:
    config = _load_config(args)
    try:
        manifest = pipeline.run_synthesize(config, count=args.count)
    except pipeline.AttemptBudgetExhausted as exc:
        print(f"synthesize: {exc}", file=sys.stderr)
        return 1
    funnel = manifest["funnel"]
    print(
        f"synthesize: {manifest['output_count']} items emitted "
        f"(exec_failure_rate {funnel['exec_failure_rate']:.3f}, cot_mismatch_rate {funnel['cot_mismatch_rate']:.3f})"
    )
    return 0


def cmd_export_finetune(args: argparse.Namespace) -> int:
    manifest = pipeline.run_export_finetune(_load_config(args))
    print(f"export-finetune: {manifest['output_count']} records")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    config = _load_config(args)
    dataset_path = Path(config.output_dir) / pipeline.STAGE_SYNTHESIZE / "dataset.jsonl"
    records = read_jsonl(dataset_path)
    if args.sample_size and args.sample_size < len(records):
        rng = random.Random(config.rng_seed)
        records = rng.sample(records, args.sample_size)
    sample = [(r["id"], r["problem"], r["solution"]) for r in records]
    templates = load_templates()
    report = verifier.audit(sample, config.provider_for(TemplateName.JUDGE), templates[TemplateName.JUDGE])
    out_path = Path(args.report_out) if args.report_out else Path(config.output_dir) / pipeline.STAGE_REPORT / "audit.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report.write(out_path)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_run_all(args: argparse.Namespace) -> int:
    config = _load_config(args)
    try:
        report = pipeline.run_all(config)
    except pipeline.AttemptBudgetExhausted as exc:
        print(f"run-all halted during synthesize: {exc}", file=sys.stderr)
        return 1
    for stage, row in report["stages"].items():
        print(f"{stage}: in={row['input']} out={row['output']}")
    print(f"run directory: {config.output_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rvsyn", description="Synthesize execution-verified math reasoning data.")
    parser.add_argument("--config", required=True, help="path to the JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the run rng seed")
    parser.add_argument("--mock-provider", default=None, help="fixture directory; forces the mock provider everywhere")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("decompose", help="decompose seed problems into validated graphs").set_defaults(func=cmd_decompose)
    sub.add_parser("label-merge", help="label functions and merge them into nodes").set_defaults(func=cmd_label_merge)
    sub.add_parser("build-library", help="build the typed library graph").set_defaults(func=cmd_build_library)
    sub.add_parser("stats", help="print library graph statistics").set_defaults(func=cmd_stats)

    p_syn = sub.add_parser("synthesize", help="generate verified dataset items")
    p_syn.add_argument("--count", type=int, default=None, help="target item count (default from config)")
    p_syn.set_defaults(func=cmd_synthesize)

    sub.add_parser("export-finetune", help="write the graph-regeneration tuning corpus").set_defaults(func=cmd_export_finetune)

    p_audit = sub.add_parser("audit", help="judge a dataset sample and report error rates")
    p_audit.add_argument("--sample-size", type=int, default=0, help="0 = whole dataset")
    p_audit.add_argument("--report-out", default=None)
    p_audit.set_defaults(func=cmd_audit)

    sub.add_parser("run-all", help="run every stage, resuming from checkpoints").set_defaults(func=cmd_run_all)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
