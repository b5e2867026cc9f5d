"""Seed-problem decomposition into validated computational graphs.

A completion is expected to carry a fenced code block holding one ``main``
plus at least one operation function. Parsing is strict about the contract
(operation functions may define local helpers but must not call each other);
everything that survives parsing is then executed and kept only if the
printed answer matches the seed's ground truth.
"""

from __future__ import annotations

import ast
import hashlib
import re
from pathlib import Path
from typing import Callable

from .canonicalizer import function_arity
from .executor import ExecRequest, ExecStatus, EmptyOutput, RunnerBackend, assemble_program, execute, extract_stdout_answer
from .provider import CompletionProvider, CompletionRequest, PromptTemplate, render_prompt
from .records import ComputationalGraph, FilterRecord, GraphOrigin, OperationFunction, SeedProblem, dump_jsonl_line


class FormatError(ValueError):
    """Completion does not contain a usable decomposition."""


_FENCE_RE = re.compile(r"```[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)


def extract_code_block(completion: str) -> str:
    """The last fenced code block (models tend to reason first, code last)."""
    blocks = _FENCE_RE.findall(completion)
    if not blocks:
        raise FormatError("no fenced code block in completion")
    return blocks[-1]


def function_id_for(source: str) -> str:
    return "fn-" + hashlib.sha256(source.encode("utf-8")).hexdigest()[:16]


def _collect_local_bindings(fndef: ast.FunctionDef) -> set[str]:
    bound: set[str] = {a.arg for a in (*fndef.args.posonlyargs, *fndef.args.args, *fndef.args.kwonlyargs)}
    if fndef.args.vararg:
        bound.add(fndef.args.vararg.arg)
    if fndef.args.kwarg:
        bound.add(fndef.args.kwarg.arg)
    for node in ast.walk(fndef):
        if isinstance(node, ast.Name) and isinstance(node.ctx, ast.Store):
            bound.add(node.id)
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node is not fndef:
            bound.add(node.name)
        elif isinstance(node, ast.alias):
            bound.add(node.asname if node.asname else node.name.split(".")[0])
    return bound


def _check_no_cross_calls(op_defs: list[ast.FunctionDef]) -> None:
    op_names = {d.name for d in op_defs}
    for fndef in op_defs:
        local = _collect_local_bindings(fndef)
        for node in ast.walk(fndef):
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
                callee = node.func.id
                if callee in op_names and callee != fndef.name and callee not in local:
                    raise FormatError(f"operation function {fndef.name!r} calls operation function {callee!r}")


def parse_decomposition(completion: str, graph_id: str | None = None, seed_id: str | None = None) -> ComputationalGraph:
    """Split the completion's code block into operation functions and main."""
    code = extract_code_block(completion)
    try:
        module = ast.parse(code)
    except SyntaxError as exc:
        raise FormatError(f"code block does not parse: {exc}") from exc

    if graph_id is None:
        graph_id = "dg-" + hashlib.sha256(completion.encode("utf-8")).hexdigest()[:12]

    main_def: ast.FunctionDef | None = None
    op_defs: list[ast.FunctionDef] = []
    for node in module.body:
        if isinstance(node, ast.FunctionDef):
            if node.name == "main":
                if main_def is not None:
                    raise FormatError("multiple main definitions")
                main_def = node
            else:
                op_defs.append(node)
        # Other top-level statements are dropped; the prompt demands
        # in-function imports, and broken mains get filtered at execution.

    if main_def is None:
        raise FormatError("no main function in code block")
    if not op_defs:
        raise FormatError("no operation functions besides main")
    _check_no_cross_calls(op_defs)

    functions = []
    for fndef in op_defs:
        source = ast.get_source_segment(code, fndef)
        if source is None:  # pragma: no cover - get_source_segment is reliable on fresh parses
            raise FormatError(f"cannot recover source for {fndef.name!r}")
        functions.append(
            OperationFunction(
                id=function_id_for(source),
                name=fndef.name,
                source=source,
                docstring=ast.get_docstring(fndef, clean=False),
                arity=function_arity(fndef),
                origin_graph_ids={graph_id},
            )
        )

    main_source = ast.get_source_segment(code, main_def)
    if main_source is None:  # pragma: no cover
        raise FormatError("cannot recover main source")

    return ComputationalGraph(
        id=graph_id,
        seed_id=seed_id,
        origin=GraphOrigin.DECOMPOSED,
        functions=functions,
        main_source=main_source,
    )


def parse_regenerated_main(completion: str) -> str:
    """Extract the ``main`` definition from a graph-regeneration completion.

    Accepts either a fenced block or raw code (the fine-tune target is the
    bare main source, so a tuned model may answer without fences).
    """
    try:
        code = extract_code_block(completion)
    except FormatError:
        code = completion
    try:
        module = ast.parse(code)
    except SyntaxError as exc:
        raise FormatError(f"regenerated code does not parse: {exc}") from exc
    mains = [n for n in module.body if isinstance(n, ast.FunctionDef) and n.name == "main"]
    if not mains:
        raise FormatError("no main function in regenerated code")
    source = ast.get_source_segment(code, mains[-1])
    if source is None:  # pragma: no cover
        raise FormatError("cannot recover main source")
    return source


def decompose(
    seed: SeedProblem,
    provider: CompletionProvider,
    template: PromptTemplate,
    temperature: float = 0.0,
    max_tokens: int = 4096,
) -> ComputationalGraph:
    """Prompt for a decomposition of one seed and parse the result."""
    prompt = render_prompt(template, {"PROBLEM": seed.problem})
    request = CompletionRequest(prompt=prompt, temperature=temperature, max_tokens=max_tokens, request_id=f"decompose-{seed.id}")
    result = provider.complete(request)
    return parse_decomposition(result.text, graph_id=f"dg-{seed.id}", seed_id=seed.id)


def validate_graph(
    graph: ComputationalGraph,
    expected_answer: str,
    backend: RunnerBackend,
    answers_equivalent: Callable[[str, str], bool],
    timeout_ms: int = 10_000,
    memory_limit_mb: int = 512,
) -> ComputationalGraph | FilterRecord:
    """Execute the graph and keep it only if it reproduces the expected answer.

    Rejections come back as FilterRecords (data, not exceptions) with reason
    ExecFailed or AnswerMismatch.
    """
    if not expected_answer.strip():
        raise ValueError("expected_answer must be non-empty")
    program = assemble_program(graph)
    request = ExecRequest(program=program, timeout_ms=timeout_ms, memory_limit_mb=memory_limit_mb, exec_id=f"validate-{graph.id}")
    result = execute(request, backend)
    if result.status != ExecStatus.OK:
        detail = (result.stderr or result.status.value).strip()[:500]
        return FilterRecord(item_id=graph.id, stage="decompose", reason="ExecFailed", detail=detail)
    try:
        printed = extract_stdout_answer(result)
    except EmptyOutput:
        return FilterRecord(item_id=graph.id, stage="decompose", reason="ExecFailed", detail="empty stdout")
    if not answers_equivalent(printed, expected_answer):
        return FilterRecord(item_id=graph.id, stage="decompose", reason="AnswerMismatch", detail=f"printed {printed!r}, expected {expected_answer!r}")
    graph.executed_answer = printed
    return graph


def export_finetune_corpus(
    graphs: list[ComputationalGraph],
    path: str | Path,
    regenerate_template: PromptTemplate,
) -> tuple[int, int]:
    """Write {input, target} JSONL records for tuning a graph regenerator.

    input = the regeneration prompt carrying the graph's function sources;
    target = the graph's main. Returns (written, skipped).
    """
    written = skipped = 0
    with open(path, "w", encoding="utf-8") as fh:
        for graph in graphs:
            if not graph.main_source.strip():
                skipped += 1
                continue
            functions_blob = "\n\n".join(fn.source.rstrip("\n") for fn in graph.functions)
            record = {
                "input": render_prompt(regenerate_template, {"FUNCTIONS": functions_blob}),
                "target": graph.main_source,
            }
            fh.write(dump_jsonl_line(record) + "\n")
            written += 1
    return written, skipped
