#!/usr/bin/env python3
"""Regenerates the end-to-end fixture set under tests/fixtures/e2e/.

The tool drives the real pipeline once with recording provider/runner shims:
every completion is fabricated here (per a hand-written plan), written to a
fixture file keyed by prompt hash, and every assembled program is executed in
a subprocess once, with the canonicalized result frozen into a JSONL file.
The committed test suite then replays those fixtures offline.

The outcome plan is asserted at the end; if the plan stops matching what the
pipeline produces, the build fails loudly instead of freezing bad fixtures.
"""

from __future__ import annotations

import ast
import json
import math
import re
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from rvsyn import canonicalizer, library as libmod, pipeline
from rvsyn.decomposer import extract_code_block
from rvsyn.executor import ExecResult, ExecStatus, program_fixture_key
from rvsyn.pipeline import PipelineConfig, sample_attempt
from rvsyn.provider import (
    CompletionRequest,
    CompletionResult,
    TemplateName,
    load_templates,
    prompt_fixture_key,
    render_prompt,
)
from rvsyn.records import dump_jsonl_line, read_jsonl

FIXTURES = REPO / "tests" / "fixtures" / "e2e"
TEMPLATES = load_templates()

# ---------------------------------------------------------------------------
# Function families used by the fabricated decompositions
# ---------------------------------------------------------------------------

FAMILIES: dict[str, tuple[str, str, bool]] = {
    # name: (source, subject, labeled_correct)
    "total_items": (
        '''def total_items(group_count, items_per_group):
    """Total number of items across identical groups.

    Args:
        group_count (int): Number of groups.
        items_per_group (int): Items in each group.
    Returns:
        int: The total item count.
    """
    return group_count * items_per_group
''',
        "Prealgebra",
        True,
    ),
    "batch_total": (
        '''def batch_total(batches, units_per_batch):
    """Multiply batch count by units per batch to get total units."""
    return batches * units_per_batch
''',
        "Prealgebra",
        True,
    ),
    "add_amounts": (
        '''def add_amounts(first_amount, second_amount):
    """Add two quantities expressed in the same unit."""
    return first_amount + second_amount
''',
        "Prealgebra",
        True,
    ),
    "subtract_amount": (
        '''def subtract_amount(total, used):
    """Remaining quantity after part of a total is used up."""
    return total - used
''',
        "Prealgebra",
        True,
    ),
    "share_equally": (
        '''def share_equally(total, parts):
    """Split a total into equal whole parts.

    Args:
        total (int): Quantity to split.
        parts (int): Number of equal parts.
    Returns:
        int: Size of one part.
    """
    return total // parts
''',
        "Prealgebra",
        True,
    ),
    "percent_of": (
        '''def percent_of(amount, percent):
    """Compute the given percentage of an amount."""
    return amount * percent // 100
''',
        "Algebra",
        True,
    ),
    "power_of": (
        '''def power_of(base, exponent):
    """Raise a base to a non-negative integer exponent."""
    return base ** exponent
''',
        "Algebra",
        True,
    ),
    "gcd_of": (
        '''def gcd_of(a, b):
    """Find the greatest common divisor of two integers."""
    import math
    return math.gcd(a, b)
''',
        "Number Theory",
        True,
    ),
    "compute_gcd": (
        '''def compute_gcd(m, n):
    """Find the greatest common divisor of two integers."""
    while n:
        m, n = n, m % n
    return m
''',
        "Number Theory",
        True,
    ),
    "lcm_of": (
        '''def lcm_of(value_a, value_b):
    """Least common multiple of two positive integers."""
    import math
    return value_a * value_b // math.gcd(value_a, value_b)
''',
        "Number Theory",
        True,
    ),
    "remainder_of": (
        '''def remainder_of(value, modulus):
    """Remainder when dividing a value by a modulus."""
    return value % modulus
''',
        "Number Theory",
        True,
    ),
    "rect_area": (
        '''def rect_area(length, width):
    """Area of a rectangle from its side lengths."""
    area = length * width
    return area
''',
        "Geometry",
        True,
    ),
    "rect_perimeter": (
        '''def rect_perimeter(length, width):
    """Perimeter of a rectangle from its side lengths."""
    return 2 * (length + width)
''',
        "Geometry",
        True,
    ),
    "triangle_area": (
        '''def triangle_area(base_len, height):
    """Area of a triangle from base and height (integer halves)."""
    return base_len * height // 2
''',
        "Geometry",
        True,
    ),
    "ways_to_choose": (
        '''def ways_to_choose(n, k):
    """Number of ways to choose k items out of n without order."""
    import math
    return math.comb(n, k)
''',
        "Counting & Probability",
        True,
    ),
    "evaluate_quadratic": (
        '''def evaluate_quadratic(a, b, c, x):
    """Evaluate a quadratic polynomial a*x^2 + b*x + c at x."""
    return a * x ** 2 + b * x + c
''',
        "Intermediate Algebra",
        True,
    ),
    "vector_dot": (
        '''def vector_dot(x1, y1, x2, y2):
    """Dot product of two plane vectors given by components."""
    return x1 * x2 + y1 * y2
''',
        "Precalculus",
        True,
    ),
    # The two below are deliberately wrong implementations; the label stage
    # marks them incorrect and drops them before merging.
    "faulty_interest": (
        '''def faulty_interest(principal, rate):
    """Simple interest earned on a principal at a percent rate."""
    return principal + rate
''',
        "Algebra",
        False,
    ),
    "wrong_ratio": (
        '''def wrong_ratio(part, whole):
    """Express a part as a fraction of the whole."""
    return whole // part
''',
        "Miscellaneous",
        False,
    ),
}

# Among label-surviving families, exactly these pairs may merge.
INTENDED_MERGES = ({"total_items", "batch_total"}, {"gcd_of", "compute_gcd"})

# ---------------------------------------------------------------------------
# Seed plan: 50 seeds with planned decompose outcomes
# ---------------------------------------------------------------------------

FORMAT_ERROR_SEEDS = {7, 23}
EXEC_FAIL_SEEDS = {11}
MISMATCH_SEEDS = {17}

SEED_FAMILIES: dict[int, tuple[str, ...]] = {
    0: ("total_items", "add_amounts"),
    1: ("total_items", "add_amounts"),
    2: ("total_items", "subtract_amount"),
    3: ("add_amounts", "subtract_amount"),
    4: ("total_items", "add_amounts"),
    5: ("add_amounts", "subtract_amount"),
    6: ("subtract_amount", "share_equally"),
    7: ("total_items", "add_amounts"),
    8: ("subtract_amount", "share_equally"),
    9: ("total_items", "share_equally"),
    10: ("gcd_of",),
    11: ("gcd_of",),
    12: ("lcm_of",),
    13: ("remainder_of",),
    14: ("compute_gcd",),
    15: ("compute_gcd",),
    16: ("percent_of", "add_amounts"),
    17: ("total_items", "add_amounts"),
    18: ("percent_of", "total_items"),
    19: ("rect_area", "rect_perimeter"),
    20: ("rect_area",),
    21: ("triangle_area",),
    22: ("triangle_area", "rect_area"),
    23: ("total_items", "share_equally"),
    24: ("power_of",),
    25: ("evaluate_quadratic",),
    26: ("vector_dot",),
    27: ("ways_to_choose",),
    28: ("faulty_interest", "add_amounts"),
    29: ("wrong_ratio", "total_items"),
    30: ("batch_total", "add_amounts"),
    31: ("batch_total",),
    32: ("batch_total", "subtract_amount"),
    33: ("total_items", "share_equally"),
    34: ("share_equally", "add_amounts"),
    35: ("gcd_of",),
    36: ("lcm_of",),
    37: ("remainder_of",),
    38: ("rect_perimeter",),
    39: ("triangle_area",),
    40: ("power_of",),
    41: ("ways_to_choose",),
    42: ("vector_dot",),
    43: ("evaluate_quadratic",),
    44: ("percent_of",),
    45: ("total_items", "add_amounts", "subtract_amount"),
    46: ("share_equally", "percent_of"),
    47: ("batch_total", "share_equally"),
    48: ("add_amounts", "total_items"),
    49: ("total_items", "add_amounts", "share_equally"),
}


def _nums(i: int) -> tuple[int, int, int, int]:
    return 3 + (i * 7) % 6, 2 + (i * 5) % 5, 4 + (i * 3) % 9, 2 + i % 3


def _seed_story(i: int, families: tuple[str, ...]) -> tuple[str, str, int]:
    """(problem text, main source, correct answer) for one seed."""
    a, b, c, d = _nums(i)
    key = families

    if key in (("total_items", "add_amounts"), ("add_amounts", "total_items")):
        problem = (
            f"A bakery fills {a} trays with {b} rolls on each tray, then bakes {c} extra rolls. "
            f"How many rolls does the bakery have in total? (batch {i})"
        )
        main = f"def main():\n    baked = total_items({a}, {b})\n    print(add_amounts(baked, {c}))\n"
        return problem, main, a * b + c
    if key == ("total_items", "subtract_amount"):
        problem = (
            f"A library shelves {a} boxes of {b} books each and then lends out {c} books. "
            f"How many books remain shelved? (case {i})"
        )
        main = f"def main():\n    stocked = total_items({a}, {b})\n    print(subtract_amount(stocked, {c}))\n"
        return problem, main, a * b - c
    if key == ("add_amounts", "subtract_amount"):
        problem = (
            f"A tank holds {a * 10} liters and a pump adds {c} liters, after which {b} liters drain away. "
            f"How many liters are in the tank now? (reading {i})"
        )
        main = f"def main():\n    filled = add_amounts({a * 10}, {c})\n    print(subtract_amount(filled, {b}))\n"
        return problem, main, a * 10 + c - b
    if key == ("subtract_amount", "share_equally"):
        total = a * b * d
        problem = (
            f"A farm picks {total + c} apples, sets {c} aside for seeds, and packs the rest equally into {d} crates. "
            f"How many apples go into each crate? (harvest {i})"
        )
        main = f"def main():\n    packed = subtract_amount({total + c}, {c})\n    print(share_equally(packed, {d}))\n"
        return problem, main, total // d
    if key == ("total_items", "share_equally"):
        problem = (
            f"A school orders {a} packs of {b * d} pencils and splits them equally among {d} classrooms. "
            f"How many pencils does each classroom receive? (order {i})"
        )
        main = f"def main():\n    ordered = total_items({a}, {b * d})\n    print(share_equally(ordered, {d}))\n"
        return problem, main, a * (b * d) // d
    if key == ("gcd_of",):
        x, y = 12 * d * a, 18 * d * b
        problem = f"Two gears have {x} and {y} teeth. What is the greatest common divisor of the two counts? (pair {i})"
        main = f"def main():\n    print(gcd_of({x}, {y}))\n"
        return problem, main, math.gcd(x, y)
    if key == ("compute_gcd",):
        x, y = 15 * d * a, 25 * d * b
        problem = f"Find the greatest common divisor of {x} and {y}. (exercise {i})"
        main = f"def main():\n    print(compute_gcd({x}, {y}))\n"
        return problem, main, math.gcd(x, y)
    if key == ("lcm_of",):
        x, y = 4 * d, 6 * b
        problem = (
            f"One lighthouse flashes every {x} seconds and another every {y} seconds. "
            f"After how many seconds do they flash together? (watch {i})"
        )
        main = f"def main():\n    print(lcm_of({x}, {y}))\n"
        return problem, main, x * y // math.gcd(x, y)
    if key == ("remainder_of",):
        x, m = 100 * a + c, 7 + d
        problem = f"When {x} marbles are packed into bags of {m}, how many marbles are left over? (count {i})"
        main = f"def main():\n    print(remainder_of({x}, {m}))\n"
        return problem, main, x % m
    if key == ("percent_of", "add_amounts"):
        base = a * 100
        problem = (
            f"A phone costs {base} dollars and a {b * 10} percent sales tax applies. "
            f"What is the total price in dollars? (quote {i})"
        )
        main = f"def main():\n    tax = percent_of({base}, {b * 10})\n    print(add_amounts({base}, tax))\n"
        return problem, main, base + base * (b * 10) // 100
    if key == ("percent_of", "total_items"):
        base = b * 100
        problem = (
            f"A warehouse holds {a} racks of {base} units each. "
            f"How many units is {d * 10} percent of the grand total? (audit {i})"
        )
        main = f"def main():\n    stored = total_items({a}, {base})\n    print(percent_of(stored, {d * 10}))\n"
        return problem, main, a * base * (d * 10) // 100
    if key == ("percent_of",):
        base = c * 100
        problem = f"What is {a * 10} percent of {base}? (quiz {i})"
        main = f"def main():\n    print(percent_of({base}, {a * 10}))\n"
        return problem, main, base * (a * 10) // 100
    if key == ("rect_area", "rect_perimeter"):
        problem = (
            f"A rectangular garden measures {a} meters by {b} meters. "
            f"What is the sum of its area and its perimeter? (plot {i})"
        )
        main = (
            f"def main():\n    combined = rect_area({a}, {b}) + rect_perimeter({a}, {b})\n"
            f"    print(combined)\n"
        )
        return problem, main, a * b + 2 * (a + b)
    if key == ("rect_area",):
        problem = f"A sheet of paper is {a * 2} centimeters by {c} centimeters. What is its area? (sheet {i})"
        main = f"def main():\n    print(rect_area({a * 2}, {c}))\n"
        return problem, main, a * 2 * c
    if key == ("rect_perimeter",):
        problem = f"A frame is {a} units by {c} units. How long is its perimeter? (frame {i})"
        main = f"def main():\n    print(rect_perimeter({a}, {c}))\n"
        return problem, main, 2 * (a + c)
    if key == ("triangle_area",):
        problem = (
            f"A triangular sail has a base of {a * 2} meters and a height of {b} meters. "
            f"What is its area? (sail {i})"
        )
        main = f"def main():\n    print(triangle_area({a * 2}, {b}))\n"
        return problem, main, a * 2 * b // 2
    if key == ("triangle_area", "rect_area"):
        problem = (
            f"A banner is a {a} by {b} rectangle joined to a triangle of base {a} and height {b * 2}. "
            f"What is the combined area? (banner {i})"
        )
        main = (
            f"def main():\n    rect = rect_area({a}, {b})\n    tri = triangle_area({a}, {b * 2})\n"
            f"    print(rect + tri)\n"
        )
        return problem, main, a * b + a * (b * 2) // 2
    if key == ("power_of",):
        problem = (
            f"A colony doubles every hour. Starting from one cell, how many cells exist after {d + 2} hours, "
            f"i.e. what is 2 to the power {d + 2}? (lab {i})"
        )
        main = f"def main():\n    print(power_of(2, {d + 2}))\n"
        return problem, main, 2 ** (d + 2)
    if key == ("evaluate_quadratic",):
        problem = f"Evaluate the polynomial {d}x^2 + {b}x + {c} at x = {a}. (worksheet {i})"
        main = f"def main():\n    print(evaluate_quadratic({d}, {b}, {c}, {a}))\n"
        return problem, main, d * a * a + b * a + c
    if key == ("vector_dot",):
        problem = f"Two forces are ({a}, {b}) and ({c}, {d}) in newtons. What is their dot product? (statics {i})"
        main = f"def main():\n    print(vector_dot({a}, {b}, {c}, {d}))\n"
        return problem, main, a * c + b * d
    if key == ("ways_to_choose",):
        n_items = 6 + d
        problem = (
            f"A coach picks {d} starters out of {n_items} players. "
            f"In how many ways can the starters be chosen? (team {i})"
        )
        main = f"def main():\n    print(ways_to_choose({n_items}, {d}))\n"
        return problem, main, math.comb(n_items, d)
    if key == ("faulty_interest", "add_amounts"):
        problem = (
            f"A deposit of {a * 100} dollars earns interest at {b} percent for one year; add the interest to the deposit. "
            f"What balance does this interest rule produce? (account {i})"
        )
        main = f"def main():\n    gain = faulty_interest({a * 100}, {b})\n    print(add_amounts({a * 100}, gain))\n"
        return problem, main, a * 100 + (a * 100 + b)
    if key == ("wrong_ratio", "total_items"):
        whole = a * b * 4
        problem = (
            f"Out of {a} stacks of {b * 4} tickets, a vendor computes the whole-over-part ratio for part {d}. "
            f"What does this ratio rule print? (booth {i})"
        )
        main = f"def main():\n    stock = total_items({a}, {b * 4})\n    print(wrong_ratio({d}, stock))\n"
        return problem, main, whole // d
    if key == ("total_items", "add_amounts", "subtract_amount"):
        problem = (
            f"A depot receives {a} pallets of {b} boxes, adds {c} loose boxes, and ships out {d} boxes. "
            f"How many boxes remain? (depot {i})"
        )
        main = (
            f"def main():\n    received = total_items({a}, {b})\n    held = add_amounts(received, {c})\n"
            f"    print(subtract_amount(held, {d}))\n"
        )
        return problem, main, a * b + c - d
    if key == ("share_equally", "percent_of"):
        pool = a * 100 * d
        problem = (
            f"A prize pool of {pool} dollars is split equally among {d} winners, and each winner donates "
            f"{b * 10} percent of a share. How many dollars does one winner donate? (draw {i})"
        )
        main = f"def main():\n    share = share_equally({pool}, {d})\n    print(percent_of(share, {b * 10}))\n"
        return problem, main, (pool // d) * (b * 10) // 100
    if key == ("share_equally", "add_amounts"):
        pool = b * d * 3
        problem = (
            f"A jar of {pool} coins is divided equally among {d} children and each child then finds {c} more coins. "
            f"How many coins does one child end up with? (jar {i})"
        )
        main = f"def main():\n    share = share_equally({pool}, {d})\n    print(add_amounts(share, {c}))\n"
        return problem, main, pool // d + c
    if key == ("batch_total", "add_amounts"):
        problem = (
            f"A plant runs {a} shifts producing {b} gadgets per shift and finds {c} gadgets in storage. "
            f"How many gadgets are available overall? (plant {i})"
        )
        main = f"def main():\n    made = batch_total({a}, {b})\n    print(add_amounts(made, {c}))\n"
        return problem, main, a * b + c
    if key == ("batch_total",):
        problem = f"A printer outputs {a * 3} pages per minute for {c} minutes. How many pages is that? (job {i})"
        main = f"def main():\n    print(batch_total({a * 3}, {c}))\n"
        return problem, main, a * 3 * c
    if key == ("batch_total", "subtract_amount"):
        problem = (
            f"A kiln fires {a} racks of {b * 2} tiles but {c} tiles crack. "
            f"How many intact tiles come out? (kiln {i})"
        )
        main = f"def main():\n    fired = batch_total({a}, {b * 2})\n    print(subtract_amount(fired, {c}))\n"
        return problem, main, a * b * 2 - c
    if key == ("batch_total", "share_equally"):
        problem = (
            f"A fleet of {a} vans carries {b * d} parcels each; the load is rebalanced equally over {d} routes. "
            f"How many parcels per route? (fleet {i})"
        )
        main = f"def main():\n    load = batch_total({a}, {b * d})\n    print(share_equally(load, {d}))\n"
        return problem, main, a * (b * d) // d
    if key == ("total_items", "add_amounts", "share_equally"):
        problem = (
            f"A cafe brews {a} urns of {b * d} cups, gets {c * d} cups delivered, and serves them equally over "
            f"{d} hours. How many cups per hour? (cafe {i})"
        )
        main = (
            f"def main():\n    brewed = total_items({a}, {b * d})\n    on_hand = add_amounts(brewed, {c * d})\n"
            f"    print(share_equally(on_hand, {d}))\n"
        )
        return problem, main, (a * b * d + c * d) // d
    raise AssertionError(f"no story for families {key}")


def _decompose_completion(i: int, families: tuple[str, ...]) -> str:
    _, main, answer = _seed_story(i, families)
    if i in FORMAT_ERROR_SEEDS:
        return (
            "Let me think through this problem step by step. The quantities combine by simple arithmetic, "
            f"and after working through the steps the answer is {answer}. No code is necessary here."
        )
    if i in EXEC_FAIL_SEEDS:
        body = main.splitlines()[1:]
        main = "def main():\n    scale = 1 // 0\n" + "\n".join(body) + "\n"
    if i in MISMATCH_SEEDS:
        main = main.replace("print(", "print(1 + ", 1)
    sources = "\n\n".join(FAMILIES[f][0].rstrip("\n") for f in families)
    reasoning = (
        "Step by step: identify the quantities, express each named operation as a reusable function, "
        "and combine them inside main so the script prints a single number."
    )
    return f"{reasoning}\n\n```python\n{sources}\n\n\n{main}```\n"


def _label_completion(fn_name: str) -> str:
    for family, (source, subject, correct) in FAMILIES.items():
        if source.splitlines()[0].startswith(f"def {fn_name}("):
            flag = "Yes" if correct else "No"
            note = (
                "The arithmetic matches the described operation."
                if correct
                else "The body does not implement the documented rule."
            )
            return f"<analyse>{note}</analyse>\n<correctness>{flag}</correctness>\n<subject>{subject}</subject>\n"
    raise AssertionError(f"label request for unknown function {fn_name!r}")


# ---------------------------------------------------------------------------
# Recording shims
# ---------------------------------------------------------------------------


class RecordingProvider:
    def __init__(self, fixtures_dir: Path, responder):
        self.fixtures_dir = fixtures_dir
        self.responder = responder

    def complete(self, request: CompletionRequest) -> CompletionResult:
        text = self.responder(request.prompt)
        path = self.fixtures_dir / f"{prompt_fixture_key(request.prompt)}.txt"
        if path.exists():
            if path.read_text(encoding="utf-8") != text:
                raise AssertionError(f"nondeterministic completion for {path.name}")
        else:
            path.write_text(text, encoding="utf-8")
        return CompletionResult(text=text, usage={}, latency_ms=0, provider_tag="recorder")


class RecordingRunner:
    """Executes trusted builder-authored programs once and freezes the results."""

    def __init__(self, results_path: Path):
        self.results_path = results_path
        self.results: dict[str, dict] = {}

    def run(self, request) -> ExecResult:
        key = program_fixture_key(request.program)
        if key not in self.results:
            proc = subprocess.run(
                [sys.executable, "-I", "-c", request.program],
                capture_output=True,
                text=True,
                timeout=30,
            )
            if proc.returncode == 0:
                record = {"status": "ok", "stdout": proc.stdout, "stderr": "", "duration_ms": 3}
            else:
                last = proc.stderr.strip().splitlines()[-1] if proc.stderr.strip() else "nonzero exit"
                record = {"status": "runtime_error", "stdout": proc.stdout, "stderr": last, "duration_ms": 5}
            record["program_sha256"] = key
            self.results[key] = record
            with open(self.results_path, "a", encoding="utf-8") as fh:
                fh.write(dump_jsonl_line(record) + "\n")
        d = self.results[key]
        return ExecResult(status=ExecStatus(d["status"]), stdout=d["stdout"], stderr=d["stderr"], duration_ms=d["duration_ms"])


class RecordingConfig(PipelineConfig):
    def provider_for(self, template):
        return self.recording_provider

    def backend(self):
        return self.recording_runner


# ---------------------------------------------------------------------------
# Synthesis-stage responders (order-sensitive plan)
# ---------------------------------------------------------------------------

POISONED_REGEN_CALLS = {2, 6}  # 0-based regenerate ordinals -> exec failure
WRONG_ANSWER_BT_CALLS = {3}    # 0-based back-translation ordinals -> CoT mismatch

TEMPLATE_HEADS = {
    TemplateName.DECOMPOSE: "Your task is to solve the following math problem using Python code",
    TemplateName.LABEL: "Please analyze the following mathematical function operation",
    TemplateName.REGENERATE: "Given a set of mathematical operation functions:",
    TemplateName.BACK_TRANSLATE: "Given a piece of code that solves a mathematical problem:",
    TemplateName.SOLVE_COT: "Solve the following math problem.",
    TemplateName.JUDGE: "Your goal is to determine if the given problem and its solution contain mistakes.",
}


class Responder:
    def __init__(self, seeds_by_problem: dict[str, int], runner: RecordingRunner):
        self.seeds_by_problem = seeds_by_problem
        self.runner = runner
        self.regen_calls = 0
        self.bt_calls = 0
        self.problem_answers: dict[str, tuple[str, bool]] = {}

    def __call__(self, prompt: str) -> str:
        for name, head in TEMPLATE_HEADS.items():
            if prompt.startswith(head):
                return getattr(self, f"respond_{name.value}")(prompt)
        raise AssertionError(f"unrecognized prompt head: {prompt[:80]!r}")

    def respond_decompose(self, prompt: str) -> str:
        m = re.search(r"Problem: (.*?)\n\nAnswer the question step by step", prompt, re.DOTALL)
        assert m, "decompose prompt shape changed"
        i = self.seeds_by_problem[m.group(1)]
        return _decompose_completion(i, SEED_FAMILIES[i])

    def respond_label(self, prompt: str) -> str:
        m = re.search(r"def (\w+)\(", prompt)
        assert m, "label prompt carries no function"
        return _label_completion(m.group(1))

    def respond_regenerate(self, prompt: str) -> str:
        ordinal = self.regen_calls
        self.regen_calls += 1
        signatures = re.findall(r"def (\w+)\(([^)]*)\)", prompt)
        lines = ["def main():"]
        for j, (name, params) in enumerate(signatures):
            arity = len([p for p in params.split(",") if p.strip()])
            args = ", ".join(str(2 + j + k) for k in range(arity))
            lines.append(f"    part_{j} = {name}({args})")
        if ordinal in POISONED_REGEN_CALLS:
            lines.insert(1, "    broken = 1 // 0")
        lines.append("    print(" + " + ".join(f"part_{j}" for j in range(len(signatures))) + ")")
        body = "\n".join(lines)
        return f"A sensible combination of the given operations:\n\n```python\n{body}\n```\n"

    def respond_back_translate(self, prompt: str) -> str:
        ordinal = self.bt_calls
        self.bt_calls += 1
        program = extract_code_block(prompt).rstrip("\n") + "\n"
        key = program_fixture_key(program)
        assert key in self.runner.results, "back-translation reached before execution was recorded"
        record = self.runner.results[key]
        assert record["status"] == "ok", "back-translation reached for a failing program"
        answer = [ln for ln in record["stdout"].splitlines() if ln.strip()][-1].strip()
        names = ", ".join(sorted(set(re.findall(r"def (\w+)\(", program)) - {"main"}))
        problem = (
            f"Exercise {ordinal + 1}: using the operations {names} with the arguments fixed in the worked "
            f"example, carry out every step and state the single number the procedure produces."
        )
        self.problem_answers[problem] = (answer, ordinal in WRONG_ANSWER_BT_CALLS)
        return (
            "<analysis>The code applies each helper once and prints the combined total.</analysis>\n"
            "<problem>Combine the listed operations and report the result.</problem>\n"
            f"<final problem>{problem}</final problem>\n"
        )

    def respond_solve_cot(self, prompt: str) -> str:
        m = re.search(r"Problem: (.*)$", prompt, re.DOTALL)
        assert m, "solve prompt shape changed"
        answer, wrong = self.problem_answers[m.group(1).strip()]
        boxed = str(int(answer) + 1) if wrong else answer
        return (
            "Working through the operations in the stated order, each step feeds the next, "
            f"and combining the intermediate values gives the final result \\boxed{{{boxed}}}.\n"
        )

    def respond_judge(self, prompt: str) -> str:
        return "Correct"


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------


def _doc_key(source: str) -> str | None:
    doc = ast.get_docstring(ast.parse(source).body[0], clean=False)
    key = canonicalizer.semantic_key(doc) if doc else None
    return key.as_str() if key else None


def sanity_check_families() -> None:
    """The survivors must merge exactly along the two intended pairs."""
    survivors = {name: src for name, (src, _, correct) in FAMILIES.items() if correct}
    keys = {name: (canonicalizer.structural_key(src).as_str(), _doc_key(src)) for name, src in survivors.items()}
    merged_pairs = set()
    names = sorted(survivors)
    for i, u in enumerate(names):
        for v in names[i + 1 :]:
            structural = keys[u][0] == keys[v][0]
            semantic = keys[u][1] is not None and keys[u][1] == keys[v][1]
            if structural or semantic:
                merged_pairs.add(frozenset({u, v}))
    expected = {frozenset(p) for p in INTENDED_MERGES}
    assert merged_pairs == expected, f"unexpected family merges: {merged_pairs ^ expected}"


def main() -> None:
    sanity_check_families()

    if FIXTURES.exists():
        shutil.rmtree(FIXTURES)
    completions = FIXTURES / "completions"
    completions.mkdir(parents=True)
    results_path = FIXTURES / "exec_results.jsonl"
    results_path.write_text("", encoding="utf-8")

    seeds = []
    seeds_by_problem: dict[str, int] = {}
    for i in range(50):
        problem, _, answer = _seed_story(i, SEED_FAMILIES[i])
        seeds.append(
            {
                "id": f"seed-{i:02d}",
                "problem": problem,
                "solution": f"Work the steps; the answer is {answer}.",
                "answer": str(answer),
            }
        )
        assert problem not in seeds_by_problem, f"duplicate problem text at seed {i}"
        seeds_by_problem[problem] = i
    seeds_path = FIXTURES / "seeds.jsonl"
    with open(seeds_path, "w", encoding="utf-8") as fh:
        for s in seeds:
            fh.write(dump_jsonl_line(s) + "\n")

    runner = RecordingRunner(results_path)
    responder = Responder(seeds_by_problem, runner)
    provider = RecordingProvider(completions, responder)

    with tempfile.TemporaryDirectory() as tmp:
        config = RecordingConfig(
            seed_path=str(seeds_path),
            output_dir=str(Path(tmp) / "run"),
            rng_seed=0,
            concurrency=1,
            synth_target=7,
            attempt_budget_factor=4,
        )
        config.recording_provider = provider
        config.recording_runner = runner

        decompose_manifest = pipeline.run_decompose(config)
        assert decompose_manifest["input_count"] == 50
        assert decompose_manifest["output_count"] == 46, decompose_manifest
        assert decompose_manifest["filtered"] == {"FormatError": 2, "ExecFailed": 1, "AnswerMismatch": 1}, decompose_manifest

        label_manifest = pipeline.run_label_and_merge(config)
        assert label_manifest["input_count"] == 19, label_manifest
        assert label_manifest["filtered"] == {"LabelIncorrect": 2}, label_manifest
        assert label_manifest["output_count"] == 17, label_manifest
        assert label_manifest["merge"]["nodes_after"] == 15, label_manifest

        library_manifest = pipeline.run_build_library(config)
        pipeline.run_export_finetune(config)

        # Choose a run seed whose first 10 attempts sample cleanly and yield
        # 10 distinct regeneration prompts (fixtures are keyed by prompt hash).
        lib = libmod.load_library(Path(config.output_dir) / pipeline.STAGE_LIBRARY / "library.json")
        chosen = None
        for candidate in range(200):
            probe = PipelineConfig(seed_path=str(seeds_path), output_dir=config.output_dir, rng_seed=candidate)
            try:
                blobs = []
                for attempt in range(10):
                    _, _, functions = sample_attempt(probe, lib, attempt)
                    blobs.append("\n\n".join(fn.source.rstrip("\n") for fn in functions))
            except libmod.SamplingExhausted:
                continue
            if len(set(blobs)) == 10:
                chosen = candidate
                break
        assert chosen is not None, "no viable run seed in 200 candidates"

        config.rng_seed = chosen
        synth_manifest = pipeline.run_synthesize(config)
        funnel = synth_manifest["funnel"]
        assert funnel["attempts"] == 10, funnel
        assert funnel["parsed_graphs"] == 10, funnel
        assert funnel["exec_failures"] == 2, funnel
        assert funnel["executed_ok"] == 8, funnel
        assert funnel["pairs_checked"] == 8, funnel
        assert funnel["mismatches"] == 1, funnel
        assert funnel["extraction_failures"] == 0, funnel
        assert funnel["emitted"] == 7, funnel
        assert funnel["exec_failure_rate"] == 0.2, funnel
        assert funnel["cot_mismatch_rate"] == 0.125, funnel
        pipeline.run_report(config)

        # Judge fixtures for the emitted dataset (used by the audit CLI test).
        dataset = read_jsonl(Path(config.output_dir) / pipeline.STAGE_SYNTHESIZE / "dataset.jsonl")
        judge_template = TEMPLATES[TemplateName.JUDGE]
        for record in dataset:
            prompt = render_prompt(judge_template, {"problem": record["problem"], "solution": record["solution"]})
            provider.complete(CompletionRequest(prompt=prompt, request_id=f"judge-{record['id']}"))

        expected = {
            "rng_seed": chosen,
            "decompose": {
                "input": 50,
                "output": 46,
                "filtered": {"FormatError": 2, "ExecFailed": 1, "AnswerMismatch": 1},
            },
            "label_merge": {
                "input": 19,
                "output": 17,
                "filtered": {"LabelIncorrect": 2},
                "nodes": 15,
                "merge_rate": (17 - 15) / 17,
                "structural_only_rate": (17 - 16) / 17,
                "semantic_only_rate": (17 - 16) / 17,
            },
            "library": {"nodes": 15, "edges": library_manifest["edge_count"], "stats": library_manifest["stats"]},
            "synthesize": {
                "target": 7,
                "attempts": 10,
                "parsed_graphs": 10,
                "exec_failures": 2,
                "executed_ok": 8,
                "pairs_checked": 8,
                "mismatches": 1,
                "extraction_failures": 0,
                "emitted": 7,
                "exec_failure_rate": 0.2,
                "cot_mismatch_rate": 0.125,
            },
        }
        (FIXTURES / "expected.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    shipped_config = {
        "seed_path": "seeds.jsonl",
        "output_dir": "run",
        "provider": {"kind": "mock", "fixtures_dir": "completions"},
        "executor": {"kind": "mock", "results_path": "exec_results.jsonl", "timeout_ms": 10000, "memory_limit_mb": 512},
        "sampling": {"strategy": "Mixed", "node_counts": [1, 2, 3]},
        "rng_seed": chosen,
        "concurrency": 2,
        "synth_target": 7,
        "attempt_budget_factor": 4,
    }
    (FIXTURES / "config.json").write_text(json.dumps(shipped_config, indent=1) + "\n", encoding="utf-8")

    n_completions = len(list(completions.glob("*.txt")))
    n_exec = len(results_path.read_text(encoding="utf-8").strip().splitlines())
    print(f"fixtures built: rng_seed={chosen}, {n_completions} completions, {n_exec} exec results")


if __name__ == "__main__":
    main()
