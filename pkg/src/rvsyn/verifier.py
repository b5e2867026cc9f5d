"""Answer normalization, equivalence checking, and the judge-based audit.

Numeric comparisons run on exact rationals (fractions.Fraction), including the
relative-tolerance test for decimals, so results at the tolerance boundary are
reproducible rather than float-luck.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .provider import (
    CompletionProvider,
    CompletionRequest,
    NoVerdictFound,
    PromptTemplate,
    JudgeVerdict,
    parse_judge,
    render_prompt,
)
from .records import VerificationOutcome, Verdict

DEFAULT_REL_TOL = Fraction(1, 10**6)


class EmptyAnswer(ValueError):
    """Answer text is empty after trimming."""


class ExtractionFailed(ValueError):
    """No final answer could be extracted from the CoT text."""


class AnswerKind(enum.Enum):
    INTEGER = "integer"
    RATIONAL = "rational"
    DECIMAL = "decimal"
    SYMBOLIC = "symbolic"


@dataclass(frozen=True)
class Answer:
    raw: str
    kind: AnswerKind
    # Exact value for the three numeric kinds; None for symbolic.
    value: Fraction | None
    # Whitespace-collapsed text, used for symbolic comparison.
    text: str
    # Digits after the decimal point, for decimals as written.
    precision: int = 0
    annotations: tuple[str, ...] = ()


_THOUSANDS_RE = re.compile(r"^[-+]?\d{1,3}(,\d{3})+(\.\d+)?$")
_INT_RE = re.compile(r"^[-+]?\d+$")
_RATIONAL_RE = re.compile(r"^([-+]?\d+)\s*/\s*(\d+)$")
_DECIMAL_RE = re.compile(r"^[-+]?(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?$")

_CURRENCY = {"$": "currency:USD", "€": "currency:EUR", "£": "currency:GBP", "¥": "currency:JPY"}


def parse_answer(raw: str) -> Answer:
    """Classify an answer string as integer, rational, decimal, or symbolic."""
    text = raw.strip()
    if not text:
        raise EmptyAnswer("answer is empty")

    annotations: list[str] = []
    text = text.replace("\u2212", "-")  # unicode minus
    if text and text[0] in _CURRENCY:
        annotations.append(_CURRENCY[text[0]])
        text = text[1:].strip()
    if text.endswith("%"):
        annotations.append("percent")
        text = text[:-1].strip()
    if _THOUSANDS_RE.match(text):
        text = text.replace(",", "")

    if _INT_RE.match(text):
        return Answer(raw=raw, kind=AnswerKind.INTEGER, value=Fraction(int(text)), text=text, annotations=tuple(annotations))

    m = _RATIONAL_RE.match(text)
    if m and int(m.group(2)) != 0:
        value = Fraction(int(m.group(1)), int(m.group(2)))
        return Answer(raw=raw, kind=AnswerKind.RATIONAL, value=value, text=text, annotations=tuple(annotations))

    m = _DECIMAL_RE.match(text)
    if m and ("." in text or "e" in text or "E" in text):
        value = Fraction(text)  # exact: Fraction accepts decimal/exponent strings
        mantissa = text.lower().split("e")[0]
        precision = len(mantissa.split(".")[1]) if "." in mantissa else 0
        return Answer(raw=raw, kind=AnswerKind.DECIMAL, value=value, text=text, precision=precision, annotations=tuple(annotations))

    symbolic = re.sub(r"\s+", " ", text)
    return Answer(raw=raw, kind=AnswerKind.SYMBOLIC, value=None, text=symbolic, annotations=tuple(annotations))


def equivalent(a: Answer, b: Answer, rel_tol: Fraction | float = DEFAULT_REL_TOL) -> bool:
    """Decide whether two parsed answers agree.

    Integers and rationals compare exactly. When either side is a decimal,
    both are promoted and compared within a relative tolerance floored at
    magnitude 1; the bound uses max(1, |a|, |b|) so the check is symmetric.
    Symbolic answers compare as normalized text.
    """
    tol = Fraction(rel_tol) if not isinstance(rel_tol, Fraction) else rel_tol
    if tol <= 0:
        raise ValueError("rel_tol must be positive")

    numeric = (AnswerKind.INTEGER, AnswerKind.RATIONAL, AnswerKind.DECIMAL)
    if a.kind in numeric and b.kind in numeric:
        assert a.value is not None and b.value is not None
        if AnswerKind.DECIMAL in (a.kind, b.kind):
            scale = max(Fraction(1), abs(a.value), abs(b.value))
            return abs(a.value - b.value) <= tol * scale
        return a.value == b.value
    if a.kind == AnswerKind.SYMBOLIC and b.kind == AnswerKind.SYMBOLIC:
        return a.text == b.text
    return False


def extract_boxed(text: str) -> str | None:
    """Content of the last balanced ``\\boxed{...}`` group, if any."""
    starts = [m.end() for m in re.finditer(r"\\boxed\s*", text)]
    for start in reversed(starts):
        if start >= len(text) or text[start] != "{":
            continue
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    return text[start + 1 : i].strip()
        # unbalanced group; try an earlier occurrence
    return None


_NUMBER_TOKEN_RE = re.compile(r"[-+]?\d{1,3}(?:,\d{3})+(?:\.\d+)?|[-+]?\d+\s*/\s*\d+|[-+]?(?:\d+\.\d+|\.\d+|\d+)")


def extract_cot_answer(cot: str) -> Answer:
    """Final answer from a CoT: last boxed group, else last number in the final paragraph."""
    if not cot.strip():
        raise ExtractionFailed("empty chain-of-thought")
    boxed = extract_boxed(cot)
    if boxed is not None:
        if not boxed:
            raise ExtractionFailed("empty boxed group")
        return parse_answer(boxed)

    paragraphs = [p for p in re.split(r"\n\s*\n", cot) if p.strip()]
    final = paragraphs[-1]
    tokens = _NUMBER_TOKEN_RE.findall(final)
    if not tokens:
        raise ExtractionFailed("no boxed answer and no number in the final paragraph")
    return parse_answer(tokens[-1])


def verify_pair(graph_answer: str, cot: str, item_id: str = "") -> VerificationOutcome:
    """Accept/discard decision for one synthesized (answer, CoT) pair."""
    truth = parse_answer(graph_answer)
    try:
        extracted = extract_cot_answer(cot)
    except ExtractionFailed:
        return VerificationOutcome(item_id=item_id, verdict=Verdict.EXTRACTION_FAILED, ground_truth=truth.raw, cot_answer=None)
    if equivalent(extracted, truth):
        return VerificationOutcome(item_id=item_id, verdict=Verdict.VERIFIED, ground_truth=truth.raw, cot_answer=extracted.raw)
    return VerificationOutcome(item_id=item_id, verdict=Verdict.ANSWER_MISMATCH, ground_truth=truth.raw, cot_answer=extracted.raw)


@dataclass
class AuditReport:
    """Error-rate estimate from a judge model over a dataset sample.

    sample_size counts items whose verdict parsed; unparsed items are reported
    separately and excluded from the rates.
    """

    sample_size: int
    problem_error_rate: float
    solution_error_rate: float
    unparsed_count: int = 0
    verdict_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sample_size": self.sample_size,
            "Problem Error Rate (%)": round(self.problem_error_rate * 100, 4),
            "Solution Error Rate (%)": round(self.solution_error_rate * 100, 4),
            "unparsed_count": self.unparsed_count,
            "verdict_counts": dict(sorted(self.verdict_counts.items())),
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n", encoding="utf-8")


def audit(
    sample: Sequence[tuple[str, str, str]],
    provider: CompletionProvider,
    judge_template: PromptTemplate,
    temperature: float = 0.0,
    max_tokens: int = 1024,
) -> AuditReport:
    """Judge each (item_id, problem, solution) triple and aggregate error rates."""
    counts = {v.value: 0 for v in JudgeVerdict}
    unparsed = 0
    for item_id, problem, solution in sample:
        prompt = render_prompt(judge_template, {"problem": problem, "solution": solution})
        request = CompletionRequest(prompt=prompt, temperature=temperature, max_tokens=max_tokens, request_id=f"judge-{item_id}")
        result = provider.complete(request)
        try:
            verdict = parse_judge(result.text)
        except NoVerdictFound:
            unparsed += 1
            continue
        counts[verdict.value] += 1

    evaluated = sum(counts.values())
    return AuditReport(
        sample_size=evaluated,
        problem_error_rate=counts[JudgeVerdict.PROBLEM_ERROR.value] / evaluated if evaluated else 0.0,
        solution_error_rate=counts[JudgeVerdict.SOLUTION_ERROR.value] / evaluated if evaluated else 0.0,
        unparsed_count=unparsed,
        verdict_counts=counts,
    )
