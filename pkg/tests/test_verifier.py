"""Answer parsing, equivalence, extraction, and audit tests."""

from __future__ import annotations

import random
from fractions import Fraction

import pytest

from rvsyn.provider import CompletionRequest, CompletionResult, TemplateName, load_templates
from rvsyn.records import Verdict
from rvsyn.verifier import (
    Answer,
    AnswerKind,
    EmptyAnswer,
    ExtractionFailed,
    audit,
    equivalent,
    extract_boxed,
    extract_cot_answer,
    parse_answer,
    verify_pair,
)

TEMPLATES = load_templates()


class TestParseAnswer:
    @pytest.mark.parametrize(
        "raw,kind,value",
        [
            ("42", AnswerKind.INTEGER, Fraction(42)),
            ("-17", AnswerKind.INTEGER, Fraction(-17)),
            ("1,234", AnswerKind.INTEGER, Fraction(1234)),
            ("1,234,567", AnswerKind.INTEGER, Fraction(1234567)),
            ("1/2", AnswerKind.RATIONAL, Fraction(1, 2)),
            ("-3/4", AnswerKind.RATIONAL, Fraction(-3, 4)),
            ("0.5", AnswerKind.DECIMAL, Fraction(1, 2)),
            ("3.14", AnswerKind.DECIMAL, Fraction(314, 100)),
            ("1.5e3", AnswerKind.DECIMAL, Fraction(1500)),
            (".25", AnswerKind.DECIMAL, Fraction(1, 4)),
        ],
    )
    def test_numeric_kinds(self, raw, kind, value):
        answer = parse_answer(raw)
        assert answer.kind == kind
        assert answer.value == value

    def test_symbolic_fallback(self):
        answer = parse_answer("x+1")
        assert answer.kind == AnswerKind.SYMBOLIC
        assert answer.text == "x+1"

    def test_symbolic_whitespace_collapse(self):
        assert parse_answer("x  +\n 1").text == "x + 1"

    def test_currency_and_percent_annotations(self):
        dollar = parse_answer("$1,250")
        assert dollar.kind == AnswerKind.INTEGER and dollar.value == 1250
        assert dollar.annotations == ("currency:USD",)
        pct = parse_answer("37%")
        assert pct.kind == AnswerKind.INTEGER and pct.value == 37
        assert pct.annotations == ("percent",)

    def test_comma_not_thousands_is_symbolic(self):
        assert parse_answer("(1, 2)").kind == AnswerKind.SYMBOLIC

    def test_zero_denominator_is_symbolic(self):
        assert parse_answer("5/0").kind == AnswerKind.SYMBOLIC

    def test_empty_raises(self):
        with pytest.raises(EmptyAnswer):
            parse_answer("   ")


def oracle_equivalent(a: Answer, b: Answer, rel_tol: Fraction = Fraction(1, 10**6)) -> bool:
    """Independent exact-rational reimplementation of the equivalence rule."""
    numeric = {AnswerKind.INTEGER, AnswerKind.RATIONAL, AnswerKind.DECIMAL}
    if a.kind in numeric and b.kind in numeric:
        x, y = a.value, b.value
        if a.kind == AnswerKind.DECIMAL or b.kind == AnswerKind.DECIMAL:
            bound = rel_tol * max(Fraction(1), abs(x), abs(y))
            return abs(x - y) <= bound
        return x == y
    if a.kind == AnswerKind.SYMBOLIC and b.kind == AnswerKind.SYMBOLIC:
        return a.text == b.text
    return False


def generate_answer_pairs(count: int, rng: random.Random) -> list[tuple[str, str]]:
    """Numeric pair generator biased toward the relative-tolerance boundary."""
    pairs = []
    for _ in range(count):
        style = rng.randrange(6)
        if style == 0:  # equal rationals in different spellings
            n, d = rng.randint(-50, 50), rng.randint(1, 50)
            k = rng.randint(1, 4)
            pairs.append((f"{n}/{d}", f"{n * k}/{d * k}"))
        elif style == 1:  # rational vs its exact decimal
            n = rng.randint(-500, 500)
            d = rng.choice([2, 4, 5, 8, 10, 16, 20, 25])
            pairs.append((f"{n}/{d}", str(n / d)))
        elif style == 2:  # integers, equal or adjacent
            n = rng.randint(-10**6, 10**6)
            pairs.append((str(n), str(n + rng.choice([0, 0, 1, -1]))))
        elif style == 3:  # decimals near the 1e-6 boundary
            base = rng.randint(1, 1000)
            jitter_digits = rng.randint(-20, 20)
            x = Fraction(base)
            y = Fraction(base) + Fraction(jitter_digits, 10**7) * max(1, base)
            pairs.append((str(base), f"{float(y):.10f}"))
        elif style == 4:  # thousands separators
            n = rng.randint(1000, 9_999_999)
            grouped = f"{n:,}"
            pairs.append((grouped, str(n + rng.choice([0, 0, 3]))))
        else:  # tiny magnitudes exercise the absolute floor at 1
            num = rng.randint(-30, 30)
            x = Fraction(num, 10**7)
            y = x + Fraction(rng.randint(-15, 15), 10**7)
            pairs.append((f"{x.numerator}/{x.denominator}", f"{float(y):.9f}"))
    return pairs


class TestEquivalent:
    def test_rational_decimal_equal(self):
        assert equivalent(parse_answer("1/2"), parse_answer("0.5"))

    def test_identity_and_difference(self):
        assert equivalent(parse_answer("42"), parse_answer("42"))
        assert not equivalent(parse_answer("42"), parse_answer("43"))

    def test_adjacent_integers_not_equivalent(self):
        assert not equivalent(parse_answer("999999"), parse_answer("1000000"))

    def test_exact_rational_no_tolerance(self):
        assert not equivalent(parse_answer("1/3"), parse_answer("333333/1000000"))

    def test_decimal_tolerance(self):
        assert equivalent(parse_answer("3.0000001"), parse_answer("3"))
        assert not equivalent(parse_answer("3.1"), parse_answer("3"))

    def test_symbolic(self):
        assert equivalent(parse_answer("x + 1"), parse_answer("x  +  1"))
        assert not equivalent(parse_answer("x+1"), parse_answer("x+2"))
        assert not equivalent(parse_answer("x"), parse_answer("5"))

    def test_symmetric_and_reflexive(self):
        rng = random.Random(5)
        for raw_a, raw_b in generate_answer_pairs(500, rng):
            a, b = parse_answer(raw_a), parse_answer(raw_b)
            assert equivalent(a, a) and equivalent(b, b)
            assert equivalent(a, b) == equivalent(b, a)

    def test_oracle_agreement_sample(self):
        rng = random.Random(6)
        for raw_a, raw_b in generate_answer_pairs(2000, rng):
            a, b = parse_answer(raw_a), parse_answer(raw_b)
            assert equivalent(a, b) == oracle_equivalent(a, b), (raw_a, raw_b)

    def test_rel_tol_must_be_positive(self):
        with pytest.raises(ValueError):
            equivalent(parse_answer("1"), parse_answer("1"), rel_tol=0)


class TestExtractBoxed:
    def test_simple(self):
        assert extract_boxed(r"the answer is \boxed{18}.") == "18"

    def test_nested_braces(self):
        assert extract_boxed(r"\boxed{\frac{1}{2}}") == r"\frac{1}{2}"

    def test_last_group_wins(self):
        assert extract_boxed(r"\boxed{1} then \boxed{2}") == "2"

    def test_unbalanced_falls_back_to_earlier(self):
        assert extract_boxed(r"\boxed{7} and \boxed{unclosed") == "7"

    def test_absent(self):
        assert extract_boxed("no boxes here") is None


class TestExtractCotAnswer:
    def test_boxed_rule(self):
        answer = extract_cot_answer("... the answer is \\boxed{18}.")
        assert answer.value == 18

    def test_last_number_fallback(self):
        answer = extract_cot_answer("First she had 30 apples.\n\nShe gave away 5, so she has 25 apples.")
        assert answer.value == 25

    def test_rational_fallback(self):
        assert extract_cot_answer("So the probability is 3/8.").value == Fraction(3, 8)

    def test_no_answer(self):
        with pytest.raises(ExtractionFailed):
            extract_cot_answer("therefore it diverges.")

    def test_trailing_whitespace_stable(self):
        a = extract_cot_answer("answer \\boxed{9}")
        b = extract_cot_answer("answer \\boxed{9}   \n\n  ")
        assert a.value == b.value == 9

    def test_text_before_final_box_irrelevant(self):
        cot = "maybe \\boxed{1}? recompute... certainly \\boxed{4}"
        assert extract_cot_answer(cot).value == 4


class TestVerifyPair:
    def test_verified(self):
        outcome = verify_pair("18", "so \\boxed{18}", item_id="i1")
        assert outcome.verdict == Verdict.VERIFIED
        assert outcome.cot_answer == "18"

    def test_mismatch(self):
        assert verify_pair("18", "so \\boxed{17}").verdict == Verdict.ANSWER_MISMATCH

    def test_extraction_failed(self):
        assert verify_pair("18", "it diverges, sadly").verdict == Verdict.EXTRACTION_FAILED

    def test_rational_decimal_verified(self):
        assert verify_pair("0.5", "hence \\boxed{1/2}").verdict == Verdict.VERIFIED


class ScriptedJudgeProvider:
    """Replays a fixed sequence of judge responses."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.calls = 0

    def complete(self, request: CompletionRequest) -> CompletionResult:
        text = self.responses[self.calls]
        self.calls += 1
        return CompletionResult(text=text, provider_tag="scripted")


class TestAudit:
    def _sample(self, n: int) -> list[tuple[str, str, str]]:
        return [(f"it-{i}", f"problem {i}", f"solution {i}") for i in range(n)]

    def test_all_correct(self):
        provider = ScriptedJudgeProvider(["Correct"] * 10)
        report = audit(self._sample(10), provider, TEMPLATES[TemplateName.JUDGE])
        assert report.problem_error_rate == 0.0
        assert report.solution_error_rate == 0.0
        assert report.sample_size == 10

    def test_reference_rates(self):
        responses = ["Problem Error"] * 9 + ["Solution Error"] * 14 + ["Correct"] * 977
        provider = ScriptedJudgeProvider(responses)
        report = audit(self._sample(1000), provider, TEMPLATES[TemplateName.JUDGE])
        assert report.sample_size == 1000
        assert report.problem_error_rate == pytest.approx(0.009)
        assert report.solution_error_rate == pytest.approx(0.014)

    def test_unparseable_excluded(self):
        responses = ["gibberish"] + ["Solution Error"] + ["Correct"] * 8
        provider = ScriptedJudgeProvider(responses)
        report = audit(self._sample(10), provider, TEMPLATES[TemplateName.JUDGE])
        assert report.unparsed_count == 1
        assert report.sample_size == 9
        assert report.solution_error_rate == pytest.approx(1 / 9)
