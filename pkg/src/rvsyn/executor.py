"""Sandboxed execution of assembled programs through an external runner.

The runner is any process that speaks the one-line-JSON wire protocol on
stdin/stdout (see ``SubprocessRunnerBackend``). A scripted mock backend
replays canned results keyed by program hash so the main test suite never
executes untrusted code.
"""

from __future__ import annotations

import enum
import hashlib
import json
import subprocess
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol

from .records import ComputationalGraph

GRACE_MS = 2000
DEFAULT_TIMEOUT_MS = 10_000
DEFAULT_MEMORY_LIMIT_MB = 512
STDOUT_CAP_BYTES = 64 * 1024


class LaunchFailure(RuntimeError):
    """Runner process could not be started."""


class ProtocolError(RuntimeError):
    """Runner response line was malformed or mismatched."""


class EmptyOutput(ValueError):
    """Program produced no non-empty stdout line."""


class ExecStatus(enum.Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    RUNTIME_ERROR = "runtime_error"
    SANDBOX_VIOLATION = "sandbox_violation"
    LAUNCH_FAILURE = "launch_failure"


@dataclass(frozen=True)
class ExecRequest:
    program: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    memory_limit_mb: int = DEFAULT_MEMORY_LIMIT_MB
    exec_id: str = ""

    def __post_init__(self) -> None:
        if not self.program:
            raise ValueError("program must be non-empty")
        if self.timeout_ms <= 0 or self.memory_limit_mb <= 0:
            raise ValueError("timeout_ms and memory_limit_mb must be positive")


@dataclass(frozen=True)
class ExecResult:
    status: ExecStatus
    stdout: str
    stderr: str
    duration_ms: int
    truncated: bool = False


class RunnerBackend(Protocol):
    def run(self, request: ExecRequest) -> ExecResult: ...


def program_fixture_key(program: str) -> str:
    return hashlib.sha256(program.encode("utf-8")).hexdigest()


class MockRunnerBackend:
    """Replays canned ExecResults keyed by sha256(program) from a JSONL file."""

    def __init__(self, results_path: str | Path) -> None:
        self.results: dict[str, ExecResult] = {}
        with open(results_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                self.results[d["program_sha256"]] = ExecResult(
                    status=ExecStatus(d["status"]),
                    stdout=d["stdout"],
                    stderr=d["stderr"],
                    duration_ms=d["duration_ms"],
                )

    def run(self, request: ExecRequest) -> ExecResult:
        key = program_fixture_key(request.program)
        if key not in self.results:
            raise LookupError(f"no canned result for program {key} (exec {request.exec_id!r})")
        return self.results[key]


class SubprocessRunnerBackend:
    """One runner process per execution; kills the process at a hard deadline.

    The runner itself enforces the program timeout; this side guarantees
    liveness by killing the whole runner at timeout_ms + grace even if the
    runner hangs or never speaks the protocol.
    """

    def __init__(self, runner_cmd: list[str], grace_ms: int = GRACE_MS) -> None:
        if not runner_cmd:
            raise ValueError("runner_cmd must be non-empty")
        self.runner_cmd = list(runner_cmd)
        self.grace_ms = grace_ms

    def run(self, request: ExecRequest) -> ExecResult:
        try:
            proc = subprocess.Popen(
                self.runner_cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
            )
        except OSError as exc:
            raise LaunchFailure(f"cannot start runner {self.runner_cmd[0]!r}: {exc}") from exc

        deadline_s = (request.timeout_ms + self.grace_ms) / 1000.0
        killed = threading.Event()

        def _kill() -> None:
            killed.set()
            proc.kill()

        timer = threading.Timer(deadline_s, _kill)
        timer.start()
        started = time.monotonic()
        line = ""
        try:
            request_line = json.dumps(
                {
                    "exec_id": request.exec_id,
                    "program": request.program,
                    "timeout_ms": request.timeout_ms,
                    "memory_limit_mb": request.memory_limit_mb,
                },
                ensure_ascii=False,
            )
            try:
                assert proc.stdin is not None and proc.stdout is not None
                proc.stdin.write(request_line + "\n")
                proc.stdin.flush()
                proc.stdin.close()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError):
                pass
        finally:
            timer.cancel()
            try:
                proc.wait(timeout=0.5)  # single-shot runner exits on stdin EOF
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        duration_ms = int((time.monotonic() - started) * 1000)

        if not line.strip():
            if killed.is_set():
                return ExecResult(
                    status=ExecStatus.TIMEOUT,
                    stdout="",
                    stderr=f"runner killed after {request.timeout_ms}ms + {self.grace_ms}ms grace",
                    duration_ms=max(duration_ms, request.timeout_ms),
                )
            raise ProtocolError("runner exited without a response line")

        try:
            payload = json.loads(line)
            status = ExecStatus(payload["status"])
            result = ExecResult(
                status=status,
                stdout=payload["stdout"],
                stderr=payload["stderr"],
                duration_ms=int(payload["duration_ms"]),
            )
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise ProtocolError(f"malformed runner response: {exc}") from exc
        if payload.get("exec_id") != request.exec_id:
            raise ProtocolError(f"exec_id mismatch: sent {request.exec_id!r}, got {payload.get('exec_id')!r}")
        return result


def execute(request: ExecRequest, backend: RunnerBackend) -> ExecResult:
    """Run one program through the backend, capping captured stdout."""
    result = backend.run(request)
    if len(result.stdout.encode("utf-8")) > STDOUT_CAP_BYTES:
        capped = result.stdout.encode("utf-8")[:STDOUT_CAP_BYTES].decode("utf-8", errors="ignore")
        result = replace(result, stdout=capped, truncated=True)
    return result


def assemble_program(graph: ComputationalGraph) -> str:
    """Self-contained program: function sources in order, main, then the call."""
    parts = [fn.source.rstrip("\n") for fn in graph.functions]
    parts.append(graph.main_source.rstrip("\n"))
    parts.append("main()")
    return "\n\n\n".join(parts) + "\n"


def extract_stdout_answer(result: ExecResult) -> str:
    """Last non-empty stdout line, trimmed."""
    if result.status != ExecStatus.OK:
        raise ValueError(f"cannot extract answer from status {result.status.value}")
    lines = [ln.strip() for ln in result.stdout.splitlines() if ln.strip()]
    if not lines:
        raise EmptyOutput("program printed nothing")
    return lines[-1]
