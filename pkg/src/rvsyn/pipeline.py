"""Checkpointed orchestration of the full synthesis flow.

Stages run in order (decompose, label+merge, build library, export finetune
corpus, synthesize), each writing append-only JSONL plus a manifest into its
own subdirectory of the run directory. A stage whose manifest exists is
considered complete and is skipped on resume. With the mock provider and mock
runner, a fixed rng seed makes the whole run byte-identical.
"""

from __future__ import annotations

import ast
import hashlib
import json
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import canonicalizer, decomposer, library as libmod, verifier
from .executor import (
    ExecRequest,
    ExecStatus,
    EmptyOutput,
    MockRunnerBackend,
    RunnerBackend,
    SubprocessRunnerBackend,
    assemble_program,
    execute,
    extract_stdout_answer,
)
from .provider import (
    CompletionProvider,
    CompletionRequest,
    HttpProvider,
    MockProvider,
    PromptTemplate,
    ProviderError,
    TagMissing,
    TemplateName,
    UnknownSubject,
    load_templates,
    parse_label,
    render_prompt,
)
from .records import (
    ComputationalGraph,
    FilterRecord,
    FunctionNode,
    GraphOrigin,
    OperationFunction,
    SeedProblem,
    SynthesizedItem,
    Verdict,
    dump_jsonl_line,
    read_jsonl,
    write_jsonl,
)

STAGE_DECOMPOSE = "decompose"
STAGE_LABEL_MERGE = "label_merge"
STAGE_LIBRARY = "library"
STAGE_FINETUNE = "finetune"
STAGE_SYNTHESIZE = "synthesize"
STAGE_REPORT = "report"

ALL_STAGES = (STAGE_DECOMPOSE, STAGE_LABEL_MERGE, STAGE_LIBRARY, STAGE_FINETUNE, STAGE_SYNTHESIZE, STAGE_REPORT)


class AttemptBudgetExhausted(RuntimeError):
    """Synthesis ran out of attempts before reaching the target count."""

    def __init__(self, emitted: int, target: int, attempts: int) -> None:
        super().__init__(f"emitted {emitted}/{target} items in {attempts} attempts")
        self.emitted = emitted
        self.target = target


@dataclass
class ProviderSettings:
    kind: str = "mock"  # "mock" | "http"
    fixtures_dir: str = ""
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    max_tokens: int = 4096
    max_in_flight: int = 8
    max_attempts: int = 3

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ProviderSettings":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class ExecutorSettings:
    kind: str = "mock"  # "mock" | "subprocess"
    results_path: str = ""
    runner_cmd: list[str] = field(default_factory=list)
    timeout_ms: int = 10_000
    memory_limit_mb: int = 512

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExecutorSettings":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SamplingSettings:
    strategy: str = "Mixed"
    node_counts: list[int] = field(default_factory=lambda: [1, 2, 3])

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SamplingSettings":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class PipelineConfig:
    seed_path: str
    output_dir: str
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    provider_overrides: dict[str, ProviderSettings] = field(default_factory=dict)
    executor: ExecutorSettings = field(default_factory=ExecutorSettings)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    rng_seed: int = 0
    concurrency: int = 8
    synth_target: int = 10
    attempt_budget_factor: int = 4
    stages: list[str] = field(default_factory=lambda: list(ALL_STAGES))
    reprompt_on_format_error: bool = False

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> "PipelineConfig":
        cfg = cls(
            seed_path=d["seed_path"],
            output_dir=d["output_dir"],
            provider=ProviderSettings.from_dict(d.get("provider", {})),
            provider_overrides={
                name: ProviderSettings.from_dict(sub) for name, sub in d.get("provider_overrides", {}).items()
            },
            executor=ExecutorSettings.from_dict(d.get("executor", {})),
            sampling=SamplingSettings.from_dict(d.get("sampling", {})),
            rng_seed=d.get("rng_seed", 0),
            concurrency=d.get("concurrency", 8),
            synth_target=d.get("synth_target", 10),
            attempt_budget_factor=d.get("attempt_budget_factor", 4),
            stages=list(d.get("stages", ALL_STAGES)),
            reprompt_on_format_error=d.get("reprompt_on_format_error", False),
        )
        unknown = set(cfg.stages) - set(ALL_STAGES)
        if unknown:
            raise ValueError(f"unknown stages in config: {sorted(unknown)}")
        if base_dir is not None:
            cfg.seed_path = str((base_dir / cfg.seed_path).resolve()) if cfg.seed_path else cfg.seed_path
            cfg.output_dir = str((base_dir / cfg.output_dir).resolve()) if cfg.output_dir else cfg.output_dir
            for settings in (cfg.provider, *cfg.provider_overrides.values()):
                if settings.fixtures_dir:
                    settings.fixtures_dir = str((base_dir / settings.fixtures_dir).resolve())
            if cfg.executor.results_path:
                cfg.executor.results_path = str((base_dir / cfg.executor.results_path).resolve())
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

    def provider_for(self, template: TemplateName) -> CompletionProvider:
        settings = self.provider_overrides.get(template.value, self.provider)
        if settings.kind == "mock":
            return MockProvider(settings.fixtures_dir)
        if settings.kind == "http":
            return HttpProvider(
                endpoint=settings.endpoint,
                model=settings.model,
                max_attempts=settings.max_attempts,
                max_in_flight=settings.max_in_flight,
            )
        raise ValueError(f"unknown provider kind {settings.kind!r}")

    def settings_for(self, template: TemplateName) -> ProviderSettings:
        return self.provider_overrides.get(template.value, self.provider)

    def backend(self) -> RunnerBackend:
        if self.executor.kind == "mock":
            return MockRunnerBackend(self.executor.results_path)
        if self.executor.kind == "subprocess":
            return SubprocessRunnerBackend(self.executor.runner_cmd)
        raise ValueError(f"unknown executor kind {self.executor.kind!r}")


def derive_seed(root: int, *parts: Any) -> int:
    """Stable child seed from the run seed and a label path."""
    blob = ":".join([str(root), *(str(p) for p in parts)])
    return int.from_bytes(hashlib.sha256(blob.encode("utf-8")).digest()[:8], "big")


def _stage_dir(config: PipelineConfig, stage: str) -> Path:
    d = Path(config.output_dir) / stage
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifest_path(config: PipelineConfig, stage: str) -> Path:
    return Path(config.output_dir) / stage / "manifest.json"


def stage_complete(config: PipelineConfig, stage: str) -> bool:
    return _manifest_path(config, stage).exists()


def read_manifest(config: PipelineConfig, stage: str) -> dict[str, Any]:
    return json.loads(_manifest_path(config, stage).read_text(encoding="utf-8"))


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(config: PipelineConfig, stage: str, payload: dict[str, Any], files: list[Path]) -> None:
    payload = dict(payload)
    payload["stage"] = stage
    payload["digests"] = {f.name: _file_digest(f) for f in files}
    text = json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=1) + "\n"
    _manifest_path(config, stage).write_text(text, encoding="utf-8")


def load_seeds(path: str | Path) -> list[SeedProblem]:
    seeds = [SeedProblem(id=d["id"], problem=d["problem"], solution=d.get("solution", ""), answer=d["answer"]) for d in read_jsonl(path)]
    ids = [s.id for s in seeds]
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate seed ids in corpus")
    return sorted(seeds, key=lambda s: s.id)


def _answers_equivalent(a: str, b: str) -> bool:
    return verifier.equivalent(verifier.parse_answer(a), verifier.parse_answer(b))


def run_decompose(config: PipelineConfig) -> dict[str, Any]:
    """Stage 1: one decomposition attempt per seed, execution-filtered."""
    stage = _stage_dir(config, STAGE_DECOMPOSE)
    if stage_complete(config, STAGE_DECOMPOSE):
        return read_manifest(config, STAGE_DECOMPOSE)

    seeds = load_seeds(config.seed_path)
    templates = load_templates()
    provider = config.provider_for(TemplateName.DECOMPOSE)
    settings = config.settings_for(TemplateName.DECOMPOSE)
    backend = config.backend()

    def attempt_decompose(seed: SeedProblem) -> ComputationalGraph:
        return decomposer.decompose(
            seed, provider, templates[TemplateName.DECOMPOSE],
            temperature=settings.temperature, max_tokens=settings.max_tokens,
        )

    def handle(seed: SeedProblem) -> ComputationalGraph | FilterRecord:
        try:
            try:
                graph = attempt_decompose(seed)
            except decomposer.FormatError:
                if not config.reprompt_on_format_error:
                    raise
                graph = attempt_decompose(seed)  # one re-prompt, then give up
        except decomposer.FormatError as exc:
            return FilterRecord(item_id=seed.id, stage=STAGE_DECOMPOSE, reason="FormatError", detail=str(exc)[:500])
        except ProviderError as exc:
            return FilterRecord(item_id=seed.id, stage=STAGE_DECOMPOSE, reason="ProviderError", detail=str(exc)[:500])
        return decomposer.validate_graph(
            graph, seed.answer, backend, _answers_equivalent,
            timeout_ms=config.executor.timeout_ms, memory_limit_mb=config.executor.memory_limit_mb,
        )

    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        results = list(pool.map(handle, seeds))

    accepted = [r for r in results if isinstance(r, ComputationalGraph)]
    rejected = [r for r in results if isinstance(r, FilterRecord)]
    write_jsonl(stage / "graphs.jsonl", [g.to_dict() for g in accepted])
    write_jsonl(stage / "rejections.jsonl", [r.to_dict() for r in rejected])

    filtered: dict[str, int] = {}
    for r in rejected:
        filtered[r.reason] = filtered.get(r.reason, 0) + 1
    payload = {"input_count": len(seeds), "output_count": len(accepted), "filtered": filtered}
    _write_manifest(config, STAGE_DECOMPOSE, payload, [stage / "graphs.jsonl", stage / "rejections.jsonl"])
    return read_manifest(config, STAGE_DECOMPOSE)


def _distinct_functions(graphs: list[ComputationalGraph]) -> list[OperationFunction]:
    merged: dict[str, OperationFunction] = {}
    for graph in graphs:
        for fn in graph.functions:
            if fn.id in merged:
                merged[fn.id].origin_graph_ids |= fn.origin_graph_ids
            else:
                merged[fn.id] = fn
    return [merged[k] for k in sorted(merged)]


def run_label_and_merge(config: PipelineConfig) -> dict[str, Any]:
    """Stage 2: label every distinct function, drop incorrect ones, merge."""
    stage = _stage_dir(config, STAGE_LABEL_MERGE)
    if stage_complete(config, STAGE_LABEL_MERGE):
        return read_manifest(config, STAGE_LABEL_MERGE)

    graphs = [ComputationalGraph.from_dict(d) for d in read_jsonl(_stage_dir(config, STAGE_DECOMPOSE) / "graphs.jsonl")]
    functions = _distinct_functions(graphs)
    templates = load_templates()
    provider = config.provider_for(TemplateName.LABEL)
    settings = config.settings_for(TemplateName.LABEL)

    def handle(fn: OperationFunction) -> OperationFunction | FilterRecord:
        prompt = render_prompt(templates[TemplateName.LABEL], {"function": fn.source})
        request = CompletionRequest(
            prompt=prompt, temperature=settings.temperature, max_tokens=settings.max_tokens,
            request_id=f"label-{fn.id}",
        )
        try:
            verdict = parse_label(provider.complete(request).text)
        except (TagMissing, UnknownSubject) as exc:
            return FilterRecord(item_id=fn.id, stage=STAGE_LABEL_MERGE, reason="LabelUnparseable", detail=str(exc)[:500])
        except ProviderError as exc:
            return FilterRecord(item_id=fn.id, stage=STAGE_LABEL_MERGE, reason="ProviderError", detail=str(exc)[:500])
        fn.topic = verdict.subject
        fn.correct = verdict.correct
        if not verdict.correct:
            return FilterRecord(item_id=fn.id, stage=STAGE_LABEL_MERGE, reason="LabelIncorrect", detail=fn.name)
        return fn

    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        results = list(pool.map(handle, functions))

    survivors = [r for r in results if isinstance(r, OperationFunction)]
    rejected = [r for r in results if isinstance(r, FilterRecord)]

    for fn in survivors:
        canonicalizer.canonicalize(fn)
    nodes = canonicalizer.merge(survivors)
    structural_nodes = canonicalizer.merge(survivors, use_semantic=False)
    semantic_nodes = canonicalizer.merge(survivors, use_structural=False)

    write_jsonl(stage / "nodes.jsonl", [n.to_dict() for n in nodes])
    write_jsonl(stage / "rejections.jsonl", [r.to_dict() for r in rejected])

    filtered: dict[str, int] = {}
    for r in rejected:
        filtered[r.reason] = filtered.get(r.reason, 0) + 1
    before = len(survivors)
    payload = {
        "input_count": len(functions),
        "output_count": len(survivors),
        "filtered": filtered,
        "merge": {
            "functions_before": before,
            "nodes_after": len(nodes),
            "merge_rate": canonicalizer.merge_rate(before, len(nodes)) if before else 0.0,
            "structural_only_rate": canonicalizer.merge_rate(before, len(structural_nodes)) if before else 0.0,
            "semantic_only_rate": canonicalizer.merge_rate(before, len(semantic_nodes)) if before else 0.0,
        },
    }
    _write_manifest(config, STAGE_LABEL_MERGE, payload, [stage / "nodes.jsonl", stage / "rejections.jsonl"])
    return read_manifest(config, STAGE_LABEL_MERGE)


def run_build_library(config: PipelineConfig) -> dict[str, Any]:
    """Stage 3: typed edges over the merged nodes, persisted with stats."""
    stage = _stage_dir(config, STAGE_LIBRARY)
    if stage_complete(config, STAGE_LIBRARY):
        return read_manifest(config, STAGE_LIBRARY)

    nodes = [FunctionNode.from_dict(d) for d in read_jsonl(_stage_dir(config, STAGE_LABEL_MERGE) / "nodes.jsonl")]
    graphs = [ComputationalGraph.from_dict(d) for d in read_jsonl(_stage_dir(config, STAGE_DECOMPOSE) / "graphs.jsonl")]

    known = {fn.id for node in nodes for fn in node.members}
    for graph in graphs:
        graph.functions = [fn for fn in graph.functions if fn.id in known]
    graphs = [g for g in graphs if g.functions]

    lib = libmod.build(nodes, graphs)
    graph_stats = libmod.stats(lib)

    libmod.save_library(lib, stage / "library.json")
    (stage / "stats.json").write_text(
        json.dumps(graph_stats.rows(), ensure_ascii=False, sort_keys=False, indent=1) + "\n", encoding="utf-8"
    )
    (stage / "stats.txt").write_text(graph_stats.render_table(), encoding="utf-8")

    payload = {
        "input_count": len(nodes),
        "output_count": len(nodes),
        "filtered": {},
        "edge_count": len(lib.edges),
        "stats": graph_stats.rows(),
    }
    _write_manifest(config, STAGE_LIBRARY, payload, [stage / "library.json", stage / "stats.json"])
    return read_manifest(config, STAGE_LIBRARY)


def run_export_finetune(config: PipelineConfig) -> dict[str, Any]:
    """Stage 4: {input, target} corpus for tuning a graph regenerator."""
    stage = _stage_dir(config, STAGE_FINETUNE)
    if stage_complete(config, STAGE_FINETUNE):
        return read_manifest(config, STAGE_FINETUNE)

    graphs = [ComputationalGraph.from_dict(d) for d in read_jsonl(_stage_dir(config, STAGE_DECOMPOSE) / "graphs.jsonl")]
    templates = load_templates()
    written, skipped = decomposer.export_finetune_corpus(graphs, stage / "corpus.jsonl", templates[TemplateName.REGENERATE])
    payload = {"input_count": len(graphs), "output_count": written, "filtered": {"MissingMain": skipped} if skipped else {}}
    _write_manifest(config, STAGE_FINETUNE, payload, [stage / "corpus.jsonl"])
    return read_manifest(config, STAGE_FINETUNE)


_FINAL_PROBLEM_RE = re.compile(r"<final problem>(.*?)</final problem>", re.DOTALL | re.IGNORECASE)


def parse_backtranslation(response: str) -> str:
    """Content of the last well-formed <final problem> tag pair, trimmed."""
    matches = _FINAL_PROBLEM_RE.findall(response)
    if not matches:
        raise TagMissing("final problem")
    return matches[-1].strip()


def _count_calls(main_source: str, function_names: set[str]) -> int:
    try:
        tree = ast.parse(main_source)
    except SyntaxError:
        return 0
    return sum(
        1
        for node in ast.walk(tree)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in function_names
    )


def sample_attempt(
    config: PipelineConfig, lib: libmod.LibraryGraph, attempt: int
) -> tuple[libmod.SampleSpec, list[FunctionNode], list[OperationFunction]]:
    """Deterministic node/function draw for one synthesis attempt."""
    node_count_rng = random.Random(derive_seed(config.rng_seed, "nodecount", attempt))
    node_count = node_count_rng.choice(config.sampling.node_counts)
    spec = libmod.SampleSpec(
        strategy=libmod.Strategy(config.sampling.strategy),
        node_count=node_count,
        rng_seed=derive_seed(config.rng_seed, "sample", attempt),
    )
    spec = libmod.resolve_strategy(spec)
    nodes = libmod.sample_nodes(lib, spec)
    functions = libmod.pick_functions(nodes, derive_seed(config.rng_seed, "pick", attempt))
    return spec, nodes, functions


@dataclass
class _AttemptResult:
    """Outcome of one independent synthesis attempt (no item id assigned yet)."""

    attempt: int
    parsed: bool = False
    exec_failed: bool = False
    executed_ok: bool = False
    pair_checked: bool = False
    mismatch: bool = False
    extraction_failed: bool = False
    rejection: FilterRecord | None = None
    item: SynthesizedItem | None = None


def _run_one_attempt(config: PipelineConfig, lib, templates, providers, backend, attempt: int) -> _AttemptResult:
    attempt_id = f"rg-{attempt:06d}"
    out = _AttemptResult(attempt=attempt)

    def reject(reason: str, detail: str) -> _AttemptResult:
        out.rejection = FilterRecord(item_id=attempt_id, stage=STAGE_SYNTHESIZE, reason=reason, detail=detail[:500])
        return out

    try:
        spec, nodes, functions = sample_attempt(config, lib, attempt)
    except libmod.SamplingExhausted as exc:
        return reject("SamplingExhausted", str(exc))
    functions_blob = "\n\n".join(fn.source.rstrip("\n") for fn in functions)

    regen_settings = config.settings_for(TemplateName.REGENERATE)
    prompt = render_prompt(templates[TemplateName.REGENERATE], {"FUNCTIONS": functions_blob})
    try:
        completion = providers[TemplateName.REGENERATE].complete(
            CompletionRequest(prompt=prompt, temperature=regen_settings.temperature, max_tokens=regen_settings.max_tokens, request_id=f"regen-{attempt:06d}")
        ).text
        main_source = decomposer.parse_regenerated_main(completion)
    except decomposer.FormatError as exc:
        return reject("FormatError", str(exc))
    except ProviderError as exc:
        return reject("ProviderError", str(exc))
    out.parsed = True

    graph = ComputationalGraph(
        id=attempt_id,
        functions=functions,
        main_source=main_source,
        origin=GraphOrigin.REGENERATED,
    )
    program = assemble_program(graph)
    result = execute(
        ExecRequest(program=program, timeout_ms=config.executor.timeout_ms, memory_limit_mb=config.executor.memory_limit_mb, exec_id=attempt_id),
        backend,
    )
    if result.status != ExecStatus.OK:
        out.exec_failed = True
        return reject("ExecFailed", (result.stderr or result.status.value).strip())
    try:
        answer = extract_stdout_answer(result)
    except EmptyOutput:
        out.exec_failed = True
        return reject("ExecFailed", "empty stdout")
    out.executed_ok = True
    graph.executed_answer = answer

    bt_settings = config.settings_for(TemplateName.BACK_TRANSLATE)
    bt_prompt = render_prompt(templates[TemplateName.BACK_TRANSLATE], {"CODE": program})
    try:
        bt_completion = providers[TemplateName.BACK_TRANSLATE].complete(
            CompletionRequest(prompt=bt_prompt, temperature=bt_settings.temperature, max_tokens=bt_settings.max_tokens, request_id=f"backtranslate-{attempt:06d}")
        ).text
        problem = parse_backtranslation(bt_completion)
    except TagMissing as exc:
        return reject("TagMissing", str(exc))
    except ProviderError as exc:
        return reject("ProviderError", str(exc))

    solve_settings = config.settings_for(TemplateName.SOLVE_COT)
    solve_prompt = render_prompt(templates[TemplateName.SOLVE_COT], {"problem": problem})
    try:
        cot = providers[TemplateName.SOLVE_COT].complete(
            CompletionRequest(prompt=solve_prompt, temperature=solve_settings.temperature, max_tokens=solve_settings.max_tokens, request_id=f"solve-{attempt:06d}")
        ).text
    except ProviderError as exc:
        return reject("ProviderError", str(exc))

    out.pair_checked = True
    outcome = verifier.verify_pair(answer, cot)
    if outcome.verdict == Verdict.ANSWER_MISMATCH:
        out.mismatch = True
        return reject("AnswerMismatch", f"cot={outcome.cot_answer!r} truth={outcome.ground_truth!r}")
    if outcome.verdict == Verdict.EXTRACTION_FAILED:
        out.extraction_failed = True
        return reject("ExtractionFailed", "no final answer in CoT")

    out.item = SynthesizedItem(
        id="",  # assigned in attempt order by run_synthesize
        problem=problem,
        cot_solution=cot,
        answer=answer,
        strategy=spec.strategy.value,
        node_ids=[n.id for n in nodes],
        function_ids=[fn.id for fn in functions],
        regenerated_graph_id=attempt_id,
        call_count=_count_calls(main_source, {fn.name for fn in functions}),
        verification=outcome,
    )
    return out


def run_synthesize(config: PipelineConfig, count: int | None = None) -> dict[str, Any]:
    """Stage 5: sample, regenerate, execute, back-translate, solve, verify, emit.

    Attempts are independent, so they run in bounded parallel windows; results
    are merged strictly in attempt order, and any attempts computed beyond the
    one that reaches the target are discarded, which keeps the output
    byte-identical to a sequential run.
    """
    stage = _stage_dir(config, STAGE_SYNTHESIZE)
    if stage_complete(config, STAGE_SYNTHESIZE):
        return read_manifest(config, STAGE_SYNTHESIZE)

    target = config.synth_target if count is None else count
    lib = libmod.load_library(_stage_dir(config, STAGE_LIBRARY) / "library.json")
    templates = load_templates()
    backend = config.backend()
    providers = {name: config.provider_for(name) for name in (TemplateName.REGENERATE, TemplateName.BACK_TRANSLATE, TemplateName.SOLVE_COT)}

    items: list[SynthesizedItem] = []
    rejected: list[FilterRecord] = []
    counters = {
        "attempts": 0,
        "parsed_graphs": 0,
        "exec_failures": 0,
        "executed_ok": 0,
        "pairs_checked": 0,
        "mismatches": 0,
        "extraction_failures": 0,
    }
    budget = config.attempt_budget_factor * target
    window = max(1, config.concurrency)

    with ThreadPoolExecutor(max_workers=window) as pool:
        for start in range(0, budget, window):
            if len(items) >= target:
                break
            attempts = range(start, min(start + window, budget))
            results = pool.map(
                lambda a: _run_one_attempt(config, lib, templates, providers, backend, a), attempts
            )
            for result in results:
                if len(items) >= target:
                    break  # later attempts in this window never happened
                counters["attempts"] += 1
                counters["parsed_graphs"] += result.parsed
                counters["exec_failures"] += result.exec_failed
                counters["executed_ok"] += result.executed_ok
                counters["pairs_checked"] += result.pair_checked
                counters["mismatches"] += result.mismatch
                counters["extraction_failures"] += result.extraction_failed
                if result.rejection is not None:
                    rejected.append(result.rejection)
                if result.item is not None:
                    result.item.id = f"synth-{len(items):06d}"
                    result.item.verification.item_id = result.item.id
                    items.append(result.item)

    write_jsonl(stage / "dataset.jsonl", [it.to_dataset_dict() for it in items])
    write_jsonl(stage / "items_full.jsonl", [it.to_dict() for it in items])
    write_jsonl(stage / "rejections.jsonl", [r.to_dict() for r in rejected])

    filtered: dict[str, int] = {}
    for r in rejected:
        filtered[r.reason] = filtered.get(r.reason, 0) + 1
    funnel = dict(counters)
    funnel["emitted"] = len(items)
    funnel["exec_failure_rate"] = counters["exec_failures"] / counters["parsed_graphs"] if counters["parsed_graphs"] else 0.0
    funnel["cot_mismatch_rate"] = (
        (counters["mismatches"] + counters["extraction_failures"]) / counters["pairs_checked"] if counters["pairs_checked"] else 0.0
    )
    payload = {
        "input_count": counters["attempts"],
        "output_count": len(items),
        "filtered": filtered,
        "funnel": funnel,
        "target": target,
    }
    _write_manifest(
        config, STAGE_SYNTHESIZE, payload,
        [stage / "dataset.jsonl", stage / "items_full.jsonl", stage / "rejections.jsonl"],
    )
    if len(items) < target:
        raise AttemptBudgetExhausted(emitted=len(items), target=target, attempts=counters["attempts"])
    return read_manifest(config, STAGE_SYNTHESIZE)


def build_funnel_report(config: PipelineConfig) -> dict[str, Any]:
    """Aggregate the per-stage manifests into one report."""
    report: dict[str, Any] = {"stages": {}}
    for stage in (STAGE_DECOMPOSE, STAGE_LABEL_MERGE, STAGE_LIBRARY, STAGE_FINETUNE, STAGE_SYNTHESIZE):
        if not stage_complete(config, stage):
            continue
        manifest = read_manifest(config, stage)
        report["stages"][stage] = {
            "input": manifest["input_count"],
            "output": manifest["output_count"],
            "filtered": manifest.get("filtered", {}),
        }
        if stage == STAGE_LABEL_MERGE:
            report["merge"] = manifest["merge"]
        if stage == STAGE_LIBRARY:
            report["library_stats"] = manifest["stats"]
        if stage == STAGE_SYNTHESIZE:
            report["synthesis_funnel"] = manifest["funnel"]
    return report


def _render_funnel_text(report: dict[str, Any]) -> str:
    lines = ["Stage funnel", "============"]
    for stage, row in report["stages"].items():
        reasons = ", ".join(f"{k}={v}" for k, v in sorted(row["filtered"].items())) or "none"
        lines.append(f"{stage}: in={row['input']} out={row['output']} filtered: {reasons}")
    if "merge" in report:
        m = report["merge"]
        lines.append(
            f"merge: {m['functions_before']} functions -> {m['nodes_after']} nodes "
            f"(rate {m['merge_rate']:.4f}, structural-only {m['structural_only_rate']:.4f}, "
            f"semantic-only {m['semantic_only_rate']:.4f})"
        )
    if "synthesis_funnel" in report:
        f = report["synthesis_funnel"]
        lines.append(f"synthesis: exec_failure_rate={f['exec_failure_rate']:.4f} cot_mismatch_rate={f['cot_mismatch_rate']:.4f}")
    if "library_stats" in report:
        lines.append("library stats:")
        for name, value in report["library_stats"].items():
            lines.append(f"  {name}: {value}")
    return "\n".join(lines) + "\n"


def run_report(config: PipelineConfig) -> dict[str, Any]:
    stage = _stage_dir(config, STAGE_REPORT)
    report = build_funnel_report(config)
    (stage / "funnel.json").write_text(json.dumps(report, ensure_ascii=False, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (stage / "funnel.txt").write_text(_render_funnel_text(report), encoding="utf-8")
    _write_manifest(config, STAGE_REPORT, {"input_count": 0, "output_count": 0, "filtered": {}}, [stage / "funnel.json"])
    return report


_STAGE_RUNNERS = {
    STAGE_DECOMPOSE: run_decompose,
    STAGE_LABEL_MERGE: run_label_and_merge,
    STAGE_LIBRARY: run_build_library,
    STAGE_FINETUNE: run_export_finetune,
    STAGE_SYNTHESIZE: run_synthesize,
    STAGE_REPORT: run_report,
}


def run_all(config: PipelineConfig) -> dict[str, Any]:
    """Enabled stages in order, resuming from completed checkpoints."""
    result: dict[str, Any] = {}
    for stage in ALL_STAGES:
        if stage in config.stages:
            result = _STAGE_RUNNERS[stage](config)
    return result if STAGE_REPORT in config.stages else build_funnel_report(config)
