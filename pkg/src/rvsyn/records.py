"""Shared dataset records passed between pipeline stages.

Everything here round-trips through JSON (one object per JSONL line) so that
stages can be checkpointed and resumed. Serialization is canonical: keys are
sorted and set-valued fields are stored as sorted lists, which is what makes
repeated runs byte-identical.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any


class Subject(enum.Enum):
    """Subject categories used for function topic labels."""

    PREALGEBRA = "Prealgebra"
    INTERMEDIATE_ALGEBRA = "Intermediate Algebra"
    ALGEBRA = "Algebra"
    NUMBER_THEORY = "Number Theory"
    PRECALCULUS = "Precalculus"
    GEOMETRY = "Geometry"
    COUNTING_PROBABILITY = "Counting & Probability"
    MISCELLANEOUS = "Miscellaneous"


class GraphOrigin(enum.Enum):
    DECOMPOSED = "Decomposed"
    REGENERATED = "Regenerated"


class Verdict(enum.Enum):
    """Outcome of checking a synthesized (problem, solution) pair."""

    VERIFIED = "Verified"
    EXEC_FAILED = "ExecFailed"
    ANSWER_MISMATCH = "AnswerMismatch"
    EXTRACTION_FAILED = "ExtractionFailed"


@dataclass(frozen=True)
class SeedProblem:
    """One annotated (problem, reference solution, answer) corpus record."""

    id: str
    problem: str
    solution: str
    answer: str

    def __post_init__(self) -> None:
        if not self.id or not self.problem.strip() or not self.answer.strip():
            raise ValueError(f"seed {self.id!r}: id, problem and answer must be non-empty")


@dataclass
class OperationFunction:
    """A single extracted operation function.

    ``id`` is a content hash of the exact source text, so the same function
    appearing in several graphs collapses to one record whose
    ``origin_graph_ids`` accumulates provenance.
    """

    id: str
    name: str
    source: str
    docstring: str | None
    arity: int
    origin_graph_ids: set[str]
    topic: Subject | None = None
    correct: bool | None = None
    structural_key: str | None = None
    semantic_key: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "source": self.source,
            "docstring": self.docstring,
            "arity": self.arity,
            "origin_graph_ids": sorted(self.origin_graph_ids),
            "topic": self.topic.value if self.topic else None,
            "correct": self.correct,
            "structural_key": self.structural_key,
            "semantic_key": self.semantic_key,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "OperationFunction":
        return cls(
            id=d["id"],
            name=d["name"],
            source=d["source"],
            docstring=d.get("docstring"),
            arity=d["arity"],
            origin_graph_ids=set(d.get("origin_graph_ids", [])),
            topic=Subject(d["topic"]) if d.get("topic") else None,
            correct=d.get("correct"),
            structural_key=d.get("structural_key"),
            semantic_key=d.get("semantic_key"),
        )


@dataclass
class ComputationalGraph:
    """Operation functions plus a ``main`` program; executable end to end."""

    id: str
    functions: list[OperationFunction]
    main_source: str
    origin: GraphOrigin
    seed_id: str | None = None
    executed_answer: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "seed_id": self.seed_id,
            "origin": self.origin.value,
            "functions": [f.to_dict() for f in self.functions],
            "main_source": self.main_source,
            "executed_answer": self.executed_answer,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ComputationalGraph":
        return cls(
            id=d["id"],
            seed_id=d.get("seed_id"),
            origin=GraphOrigin(d["origin"]),
            functions=[OperationFunction.from_dict(f) for f in d["functions"]],
            main_source=d["main_source"],
            executed_answer=d.get("executed_answer"),
        )


@dataclass
class FunctionNode:
    """A merged equivalence class of operation functions."""

    id: str
    members: list[OperationFunction]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("FunctionNode requires at least one member")
        self.members = sorted(self.members, key=lambda f: f.id)

    @property
    def topics(self) -> set[Subject]:
        return {f.topic for f in self.members if f.topic is not None}

    @property
    def structural_keys(self) -> set[str]:
        return {f.structural_key for f in self.members if f.structural_key}

    @property
    def semantic_keys(self) -> set[str]:
        return {f.semantic_key for f in self.members if f.semantic_key}

    @property
    def origin_graph_ids(self) -> set[str]:
        out: set[str] = set()
        for f in self.members:
            out |= f.origin_graph_ids
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "members": [f.to_dict() for f in self.members]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FunctionNode":
        return cls(id=d["id"], members=[OperationFunction.from_dict(f) for f in d["members"]])


@dataclass(frozen=True)
class FilterRecord:
    """One rejected item: which stage dropped it and why."""

    item_id: str
    stage: str
    reason: str
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"item_id": self.item_id, "stage": self.stage, "reason": self.reason, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FilterRecord":
        return cls(item_id=d["item_id"], stage=d["stage"], reason=d["reason"], detail=d.get("detail", ""))


@dataclass
class VerificationOutcome:
    item_id: str
    verdict: Verdict
    ground_truth: str | None = None
    cot_answer: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "verdict": self.verdict.value,
            "ground_truth": self.ground_truth,
            "cot_answer": self.cot_answer,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "VerificationOutcome":
        return cls(
            item_id=d["item_id"],
            verdict=Verdict(d["verdict"]),
            ground_truth=d.get("ground_truth"),
            cot_answer=d.get("cot_answer"),
        )


@dataclass
class SynthesizedItem:
    """Final dataset record with provenance and its verification outcome."""

    id: str
    problem: str
    cot_solution: str
    answer: str
    strategy: str
    node_ids: list[str]
    function_ids: list[str]
    regenerated_graph_id: str
    call_count: int
    verification: VerificationOutcome

    def to_dataset_dict(self) -> dict[str, Any]:
        """The external JSONL schema: {id, problem, solution, answer, meta}."""
        return {
            "id": self.id,
            "problem": self.problem,
            "solution": self.cot_solution,
            "answer": self.answer,
            "meta": {
                "strategy": self.strategy,
                "node_ids": self.node_ids,
                "node_count": len(self.node_ids),
                "call_count": self.call_count,
            },
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "problem": self.problem,
            "cot_solution": self.cot_solution,
            "answer": self.answer,
            "strategy": self.strategy,
            "node_ids": self.node_ids,
            "function_ids": self.function_ids,
            "regenerated_graph_id": self.regenerated_graph_id,
            "call_count": self.call_count,
            "verification": self.verification.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SynthesizedItem":
        return cls(
            id=d["id"],
            problem=d["problem"],
            cot_solution=d["cot_solution"],
            answer=d["answer"],
            strategy=d["strategy"],
            node_ids=list(d["node_ids"]),
            function_ids=list(d["function_ids"]),
            regenerated_graph_id=d["regenerated_graph_id"],
            call_count=d["call_count"],
            verification=VerificationOutcome.from_dict(d["verification"]),
        )


def dump_jsonl_line(obj: dict[str, Any]) -> str:
    """Canonical one-line JSON used for every store this package writes."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def read_jsonl(path: Any) -> list[dict[str, Any]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_jsonl(path: Any, objs: list[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(dump_jsonl_line(obj) + "\n")
