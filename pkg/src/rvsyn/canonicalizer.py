"""Structural and semantic fingerprints for operation functions, plus merging.

Two functions are treated as the same skill when either fingerprint matches:

* structural key: the function BODY is parsed to a syntax tree, the docstring
  is dropped, every locally bound identifier (parameters, locals, in-function
  import aliases, nested defs) is renamed to v0, v1, ... in order of first
  occurrence in the body, and the tree is serialized and hashed. Free names
  (library attributes, builtins) stay verbatim because they carry the math.
  The key pairs that digest with the function's arity.
* semantic key: hash of the whitespace-normalized docstring.

Merging unions both equivalences and partitions the corpus into nodes.
"""

from __future__ import annotations

import ast
import hashlib
import re
from dataclasses import dataclass

from .records import FunctionNode, OperationFunction


class ParseError(ValueError):
    """Source is not a single valid function definition."""


@dataclass(frozen=True)
class StructuralKey:
    digest: str
    arity: int

    def as_str(self) -> str:
        return f"{self.digest}:{self.arity}"


@dataclass(frozen=True)
class SemanticKey:
    digest: str

    def as_str(self) -> str:
        return self.digest


def parse_single_function(source: str) -> ast.FunctionDef:
    """Parse source expected to hold exactly one top-level ``def``."""
    try:
        module = ast.parse(source)
    except SyntaxError as exc:
        raise ParseError(f"invalid syntax: {exc}") from exc
    defs = [n for n in module.body if isinstance(n, ast.FunctionDef)]
    if len(defs) != 1 or len(module.body) != 1:
        raise ParseError("expected exactly one top-level function definition")
    return defs[0]


def function_arity(fn: ast.FunctionDef) -> int:
    a = fn.args
    return len(a.posonlyargs) + len(a.args) + len(a.kwonlyargs) + (1 if a.vararg else 0) + (1 if a.kwarg else 0)


def _strip_docstring(body: list[ast.stmt]) -> list[ast.stmt]:
    if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) and isinstance(body[0].value.value, str):
        return body[1:]
    return body


class _BoundNameCollector(ast.NodeVisitor):
    """Collects every name the function binds, treating its scope as flat.

    Covers parameters, assignment targets, loop/with/except targets,
    comprehension variables, walrus targets, import aliases, and the names
    and parameters of nested function definitions.
    """

    def __init__(self) -> None:
        self.bound: set[str] = set()

    def visit_Name(self, node: ast.Name) -> None:
        if isinstance(node.ctx, (ast.Store, ast.Del)):
            self.bound.add(node.id)
        self.generic_visit(node)

    def visit_arg(self, node: ast.arg) -> None:
        self.bound.add(node.arg)
        self.generic_visit(node)

    def visit_FunctionDef(self, node: ast.FunctionDef) -> None:
        self.bound.add(node.name)
        self.generic_visit(node)

    def visit_AsyncFunctionDef(self, node: ast.AsyncFunctionDef) -> None:
        self.bound.add(node.name)
        self.generic_visit(node)

    def visit_ClassDef(self, node: ast.ClassDef) -> None:
        self.bound.add(node.name)
        self.generic_visit(node)

    def visit_Lambda(self, node: ast.Lambda) -> None:
        self.generic_visit(node)

    def visit_alias(self, node: ast.alias) -> None:
        if node.asname:
            self.bound.add(node.asname)
        elif "." not in node.name:
            # `import m` / `from m import f` bind the plain name. A dotted
            # `import a.b` has no renameable alias slot, so `a` stays free.
            self.bound.add(node.name)

    def visit_ExceptHandler(self, node: ast.ExceptHandler) -> None:
        if node.name:
            self.bound.add(node.name)
        self.generic_visit(node)

    def visit_Global(self, node: ast.Global) -> None:
        self.bound.update(node.names)

    def visit_Nonlocal(self, node: ast.Nonlocal) -> None:
        self.bound.update(node.names)


def _iter_nodes_in_source_order(node: ast.AST):
    yield node
    for child in ast.iter_child_nodes(node):
        yield from _iter_nodes_in_source_order(child)


def _first_occurrence_order(body: list[ast.stmt], bound: set[str]) -> list[str]:
    seen: list[str] = []
    seen_set: set[str] = set()

    def note(name: str) -> None:
        if name in bound and name not in seen_set:
            seen_set.add(name)
            seen.append(name)

    for stmt in body:
        for node in _iter_nodes_in_source_order(stmt):
            if isinstance(node, ast.Name):
                note(node.id)
            elif isinstance(node, ast.arg):
                note(node.arg)
            elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                note(node.name)
            elif isinstance(node, ast.alias):
                note(node.asname if node.asname else node.name)
            elif isinstance(node, ast.ExceptHandler) and node.name:
                note(node.name)
            elif isinstance(node, (ast.Global, ast.Nonlocal)):
                for name in node.names:
                    note(name)
    return seen


class _Renamer(ast.NodeTransformer):
    def __init__(self, mapping: dict[str, str]) -> None:
        self.mapping = mapping

    def _map(self, name: str) -> str:
        return self.mapping.get(name, name)

    def visit_Name(self, node: ast.Name) -> ast.Name:
        node.id = self._map(node.id)
        return self.generic_visit(node)

    def visit_arg(self, node: ast.arg) -> ast.arg:
        node.arg = self._map(node.arg)
        return self.generic_visit(node)

    def visit_FunctionDef(self, node: ast.FunctionDef) -> ast.FunctionDef:
        node.name = self._map(node.name)
        return self.generic_visit(node)

    def visit_AsyncFunctionDef(self, node: ast.AsyncFunctionDef) -> ast.AsyncFunctionDef:
        node.name = self._map(node.name)
        return self.generic_visit(node)

    def visit_ClassDef(self, node: ast.ClassDef) -> ast.ClassDef:
        node.name = self._map(node.name)
        return self.generic_visit(node)

    def visit_alias(self, node: ast.alias) -> ast.alias:
        if node.asname:
            node.asname = self._map(node.asname)
        elif "." not in node.name and node.name in self.mapping:
            # Rewrite `import m` as `import m as vK` so the binding renames
            # while the module name itself stays verbatim.
            node.asname = self.mapping[node.name]
        return node

    def visit_ExceptHandler(self, node: ast.ExceptHandler) -> ast.ExceptHandler:
        if node.name:
            node.name = self._map(node.name)
        return self.generic_visit(node)

    def visit_Global(self, node: ast.Global) -> ast.Global:
        node.names = [self._map(n) for n in node.names]
        return node

    def visit_Nonlocal(self, node: ast.Nonlocal) -> ast.Nonlocal:
        node.names = [self._map(n) for n in node.names]
        return node


def canonical_body_dump(fn: OperationFunction | str) -> str:
    """Deterministic serialization of the alpha-renamed, docstring-free body."""
    source = fn if isinstance(fn, str) else fn.source
    return _canonical_dump(parse_single_function(source))


def _canonical_dump(fndef: ast.FunctionDef) -> str:
    body = _strip_docstring(fndef.body)

    collector = _BoundNameCollector()
    for a in (*fndef.args.posonlyargs, *fndef.args.args, *fndef.args.kwonlyargs):
        collector.bound.add(a.arg)
    if fndef.args.vararg:
        collector.bound.add(fndef.args.vararg.arg)
    if fndef.args.kwarg:
        collector.bound.add(fndef.args.kwarg.arg)
    for stmt in body:
        collector.visit(stmt)

    order = _first_occurrence_order(body, collector.bound)
    # Parameters that never occur in the body come last, in declaration order.
    declared = [a.arg for a in (*fndef.args.posonlyargs, *fndef.args.args, *fndef.args.kwonlyargs)]
    if fndef.args.vararg:
        declared.append(fndef.args.vararg.arg)
    if fndef.args.kwarg:
        declared.append(fndef.args.kwarg.arg)
    for name in declared:
        if name not in order:
            order.append(name)
    for name in sorted(collector.bound - set(order)):
        order.append(name)

    mapping = {name: f"v{i}" for i, name in enumerate(order)}
    renamer = _Renamer(mapping)
    canonical = ast.Module(body=[renamer.visit(stmt) for stmt in body], type_ignores=[])
    return ast.dump(canonical, annotate_fields=True, include_attributes=False)


def structural_key(fn: OperationFunction | str) -> StructuralKey:
    """Fingerprint of the computation, invariant to bound-name choices."""
    source = fn if isinstance(fn, str) else fn.source
    fndef = parse_single_function(source)
    dump = _canonical_dump(fndef)
    digest = hashlib.sha256(dump.encode("utf-8")).hexdigest()
    return StructuralKey(digest=digest, arity=function_arity(fndef))


def normalize_docstring(docstring: str) -> str:
    return re.sub(r"\s+", " ", docstring).strip()


def semantic_key(fn: OperationFunction | str | None) -> SemanticKey | None:
    """Hash of the normalized docstring; None when there is no docstring."""
    if fn is None:
        return None
    if isinstance(fn, str):
        docstring = fn
    else:
        docstring = fn.docstring
    if docstring is None or not docstring.strip():
        return None
    digest = hashlib.sha256(normalize_docstring(docstring).encode("utf-8")).hexdigest()
    return SemanticKey(digest=digest)


def canonicalize(fn: OperationFunction) -> OperationFunction:
    """Fill in both key fields on the record (structural always, semantic iff docstring)."""
    fn.structural_key = structural_key(fn).as_str()
    sem = semantic_key(fn)
    fn.semantic_key = sem.as_str() if sem else None
    return fn


class UnionFind:
    """Disjoint sets over arbitrary hashable items, path-halving + union by size."""

    def __init__(self) -> None:
        self.parent: dict = {}
        self.size: dict = {}

    def find(self, x):
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1
            return x
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x, y) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return
        if self.size[rx] < self.size[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        self.size[rx] += self.size[ry]


def node_id_for(member_ids: list[str]) -> str:
    digest = hashlib.sha256("\n".join(sorted(member_ids)).encode("utf-8")).hexdigest()
    return f"node-{digest[:16]}"


def merge(
    functions: list[OperationFunction],
    use_structural: bool = True,
    use_semantic: bool = True,
) -> list[FunctionNode]:
    """Partition functions into connected components of the similarity relation.

    The relation joins functions with equal structural keys or equal (present)
    semantic keys; components are found by union-find over key buckets, so the
    result is independent of input order. The key toggles exist to report the
    structural-only and semantic-only merge sub-rates.
    """
    for fn in functions:
        if fn.structural_key is None:
            canonicalize(fn)

    uf = UnionFind()
    by_id: dict[str, OperationFunction] = {}
    for fn in functions:
        by_id[fn.id] = fn
        uf.find(fn.id)

    buckets: dict[str, str] = {}
    for fn in sorted(by_id.values(), key=lambda f: f.id):
        keys = []
        if use_structural and fn.structural_key:
            keys.append(f"s:{fn.structural_key}")
        if use_semantic and fn.semantic_key:
            keys.append(f"d:{fn.semantic_key}")
        for key in keys:
            if key in buckets:
                uf.union(buckets[key], fn.id)
            else:
                buckets[key] = fn.id

    components: dict[str, list[OperationFunction]] = {}
    for fn_id, fn in by_id.items():
        components.setdefault(uf.find(fn_id), []).append(fn)

    nodes = []
    for members in components.values():
        member_ids = sorted(f.id for f in members)
        nodes.append(FunctionNode(id=node_id_for(member_ids), members=members))
    nodes.sort(key=lambda n: n.id)
    return nodes


def merge_rate(before: int, after: int) -> float:
    """Fraction of functions eliminated by merging."""
    if before == 0:
        raise ValueError("merge_rate undefined for an empty corpus")
    return (before - after) / before
