"""Completion providers and the prompt-template registry.

Two provider implementations sit behind one protocol: an HTTP client for any
OpenAI-compatible chat-completions endpoint, and an offline mock that resolves
a stable hash of the prompt to a fixture file. The mock is what makes the
whole pipeline reproducible in tests: same prompt, same bytes back, every run.
"""

from __future__ import annotations

import enum
import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

from .records import Subject

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_]+)\}")

API_KEY_ENV_VAR = "RVSYN_API_KEY"


class ProviderError(Exception):
    """Base class for completion failures."""


class TransportError(ProviderError):
    """Network or HTTP failure that survived the retry budget."""


class RateLimited(ProviderError):
    """HTTP 429 after the retry budget was exhausted."""


class EmptyCompletion(ProviderError):
    """The endpoint answered but produced no text."""


class FixtureMissing(ProviderError):
    """Mock provider has no fixture file for this prompt hash."""


class MissingPlaceholder(KeyError):
    """A template placeholder was left unbound."""

    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name


class TagMissing(ValueError):
    """An expected tagged field is absent from a model response."""


class UnknownSubject(ValueError):
    """Subject string outside the enumerated categories."""


class NoVerdictFound(ValueError):
    """None of the judge verdict literals occur in the response."""


class TemplateName(enum.Enum):
    DECOMPOSE = "decompose"
    LABEL = "label"
    REGENERATE = "regenerate"
    BACK_TRANSLATE = "back_translate"
    SOLVE_COT = "solve_cot"
    JUDGE = "judge"


@dataclass(frozen=True)
class PromptTemplate:
    name: TemplateName
    body: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(PLACEHOLDER_RE.findall(self.body))


def load_template(name: TemplateName, templates_dir: Path | None = None) -> PromptTemplate:
    """Load one template body verbatim from its plain-text file."""
    if templates_dir is not None:
        body = (templates_dir / f"{name.value}.txt").read_text(encoding="utf-8")
    else:
        body = resources.files("rvsyn.templates").joinpath(f"{name.value}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name=name, body=body)


def load_templates(templates_dir: Path | None = None) -> dict[TemplateName, PromptTemplate]:
    return {name: load_template(name, templates_dir) for name in TemplateName}


def render_prompt(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Substitute every ``{name}`` placeholder in one pass.

    Bindings must cover all placeholders; substituted values are not rescanned,
    so braces inside problem text or code cannot corrupt the result.
    """
    missing = template.placeholders - bindings.keys()
    if missing:
        raise MissingPlaceholder(sorted(missing)[0])

    def _sub(m: re.Match[str]) -> str:
        return bindings[m.group(1)]

    return PLACEHOLDER_RE.sub(_sub, template.body)


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 4096
    request_id: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    latency_ms: int = 0
    provider_tag: str = ""


class CompletionProvider(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResult: ...


def prompt_fixture_key(prompt: str) -> str:
    """Stable hash a mock fixture file is named by."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockProvider:
    """Resolves sha256(prompt) to ``<fixtures_dir>/<hash>.txt``.

    Deterministic by construction: the response is whatever bytes the fixture
    file holds, so two identical requests are bit-identical.
    """

    def __init__(self, fixtures_dir: str | Path) -> None:
        self.fixtures_dir = Path(fixtures_dir)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        key = prompt_fixture_key(request.prompt)
        path = self.fixtures_dir / f"{key}.txt"
        if not path.exists():
            raise FixtureMissing(f"no fixture {key}.txt for request {request.request_id!r}")
        text = path.read_text(encoding="utf-8")
        if not text:
            raise EmptyCompletion(f"fixture {key}.txt is empty")
        usage = {"prompt_tokens": len(request.prompt.split()), "completion_tokens": len(text.split())}
        return CompletionResult(text=text, usage=usage, latency_ms=0, provider_tag="mock")


class HttpProvider:
    """OpenAI-compatible chat-completions client.

    Retries connection errors, timeouts, 429 and 502/503/504 up to
    ``max_attempts`` with exponential backoff starting at ``backoff_s``.
    A semaphore bounds in-flight requests across threads.
    """

    RETRYABLE_STATUS = {429, 502, 503, 504}

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
        max_in_flight: int = 8,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV_VAR, "")
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self._gate = threading.Semaphore(max_in_flight)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        import requests

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        url = f"{self.endpoint}/chat/completions"
        started = time.monotonic()
        last_error: Exception | None = None
        rate_limited = False
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = requests.post(url, json=payload, headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code in self.RETRYABLE_STATUS:
                rate_limited = resp.status_code == 429
                last_error = TransportError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:500]}")
            return self._parse_response(resp.json(), started)

        if rate_limited:
            raise RateLimited(f"retry budget exhausted for {request.request_id!r}")
        raise TransportError(f"{last_error} (after {self.max_attempts} attempts)")

    def _parse_response(self, body: dict, started: float) -> CompletionResult:
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        if not text:
            raise EmptyCompletion("endpoint returned an empty completion")
        usage = {k: v for k, v in (body.get("usage") or {}).items() if isinstance(v, int)}
        latency_ms = int((time.monotonic() - started) * 1000)
        return CompletionResult(text=text, usage=usage, latency_ms=latency_ms, provider_tag=self.model)


@dataclass(frozen=True)
class LabelVerdict:
    correct: bool
    subject: Subject
    analysis: str = ""


class JudgeVerdict(enum.Enum):
    CORRECT = "Correct"
    PROBLEM_ERROR = "Problem Error"
    SOLUTION_ERROR = "Solution Error"


_SUBJECT_LOOKUP = {s.value.lower(): s for s in Subject}
# The prompt spells the category with an ampersand; accept the spelled-out form too.
_SUBJECT_LOOKUP["counting and probability"] = Subject.COUNTING_PROBABILITY

_TAG_RES = {
    tag: re.compile(rf"<{tag}>(.*?)</{tag}>", re.DOTALL | re.IGNORECASE)
    for tag in ("analyse", "correctness", "subject")
}


def _last_tag(response: str, tag: str) -> str | None:
    matches = _TAG_RES[tag].findall(response)
    return matches[-1].strip() if matches else None


def parse_label(response: str) -> LabelVerdict:
    """Extract the tagged correctness/subject fields from a labeling reply."""
    correctness = _last_tag(response, "correctness")
    if correctness is None:
        raise TagMissing("correctness")
    value = correctness.strip().lower()
    if value not in ("yes", "no"):
        raise TagMissing(f"correctness value {correctness!r} is not Yes/No")

    subject_raw = _last_tag(response, "subject")
    if subject_raw is None:
        raise TagMissing("subject")
    normalized = re.sub(r"\s+", " ", subject_raw).strip().lower()
    subject = _SUBJECT_LOOKUP.get(normalized)
    if subject is None:
        raise UnknownSubject(subject_raw)

    analysis = _last_tag(response, "analyse") or ""
    return LabelVerdict(correct=value == "yes", subject=subject, analysis=analysis)


def format_label(verdict: LabelVerdict) -> str:
    """Well-formed labeling response; inverse of parse_label."""
    return (
        f"<analyse>{verdict.analysis}</analyse>\n"
        f"<correctness>{'Yes' if verdict.correct else 'No'}</correctness>\n"
        f"<subject>{verdict.subject.value}</subject>"
    )


_JUDGE_RE = re.compile(r"\b(problem\s+error|solution\s+error|correct)\b", re.IGNORECASE)


def parse_judge(response: str) -> JudgeVerdict:
    """Map the first verdict literal in the response to its enum value."""
    m = _JUDGE_RE.search(response)
    if m is None:
        raise NoVerdictFound(response[:200])
    literal = re.sub(r"\s+", " ", m.group(1)).lower()
    return {
        "correct": JudgeVerdict.CORRECT,
        "problem error": JudgeVerdict.PROBLEM_ERROR,
        "solution error": JudgeVerdict.SOLUTION_ERROR,
    }[literal]
