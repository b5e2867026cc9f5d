"""Sandbox runner: executes one program per request line under restrictions.

Each request runs in a fresh child process with its own session, OS resource
limits, a throwaway scratch working directory, and an in-child audit hook
that denies network access and writes outside the scratch directory. The
serve loop never crashes on bad input; malformed lines get an error response.
"""

from __future__ import annotations

import ast
import json
import os
import resource
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

GRACE_MS = 2000
STDOUT_CAP = 256 * 1024

# Standard math/array toolkit a generated solution may import directly.
# Transitive imports inside these packages are not restricted.
DEFAULT_ALLOWED_IMPORTS = frozenset(
    {
        "math", "cmath", "fractions", "decimal", "statistics", "itertools",
        "functools", "operator", "collections", "random", "re", "string",
        "heapq", "bisect", "array", "numbers", "typing", "abc", "copy",
        "datetime", "time", "numpy", "sympy",
    }
)

# Prepended to every program; runs before user code in the child.
GUARD_PRELUDE = '''\
import os as _rvr_os, sys as _rvr_sys
_RVR_SCRATCH = _rvr_os.path.realpath(_rvr_os.getcwd())
def _rvr_guard(event, args):
    if event.startswith("socket."):
        raise RuntimeError("SANDBOX_VIOLATION: network access is disabled")
    if event in ("subprocess.Popen", "os.system", "os.exec", "os.posix_spawn", "os.spawn"):
        raise RuntimeError("SANDBOX_VIOLATION: spawning processes is disabled")
    if event == "open":
        path, mode = args[0], args[1]
        if isinstance(path, int) or mode is None:
            return
        if any(flag in mode for flag in ("w", "a", "x", "+")):
            raw = path if isinstance(path, str) else _rvr_os.fsdecode(path)
            target = _rvr_os.path.realpath(_rvr_os.path.join(_RVR_SCRATCH, raw))
            if target != _RVR_SCRATCH and not target.startswith(_RVR_SCRATCH + _rvr_os.sep):
                raise RuntimeError("SANDBOX_VIOLATION: write outside scratch directory")
_rvr_sys.addaudithook(_rvr_guard)
'''


@dataclass
class RunnerConfig:
    scratch_dir: Path
    allow_imports: frozenset[str] = DEFAULT_ALLOWED_IMPORTS
    hard_timeout_ms: int = 120_000

    def __post_init__(self) -> None:
        self.scratch_dir = Path(self.scratch_dir)
        if not self.scratch_dir.is_dir() or not os.access(self.scratch_dir, os.W_OK):
            raise ValueError(f"scratch_dir {self.scratch_dir} must exist and be writable")


def _response(exec_id: str, status: str, stdout: str, stderr: str, duration_ms: int) -> dict:
    return {
        "exec_id": exec_id,
        "status": status,
        "stdout": stdout[:STDOUT_CAP],
        "stderr": stderr[:STDOUT_CAP],
        "duration_ms": duration_ms,
    }


def check_imports(program: str, allowed: frozenset[str]) -> str | None:
    """Static allowlist check on the program's own import statements."""
    try:
        tree = ast.parse(program)
    except SyntaxError:
        return None  # let the interpreter report it as a runtime error
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            roots = [alias.name.split(".")[0] for alias in node.names]
        elif isinstance(node, ast.ImportFrom):
            roots = [node.module.split(".")[0]] if node.module and node.level == 0 else []
        else:
            continue
        for root in roots:
            if root not in allowed:
                return root
    return None


def _child_limits(timeout_ms: int, memory_limit_mb: int):
    cpu_seconds = timeout_ms // 1000 + 2
    mem_bytes = memory_limit_mb * 1024 * 1024

    def apply() -> None:
        os.setsid()
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds + 1))
        resource.setrlimit(resource.RLIMIT_AS, (mem_bytes, mem_bytes))
        resource.setrlimit(resource.RLIMIT_FSIZE, (32 * 1024 * 1024, 32 * 1024 * 1024))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    return apply


def execute_request(request: dict, config: RunnerConfig) -> dict:
    """Run one program in a restricted child; always returns a response dict."""
    exec_id = str(request.get("exec_id", ""))
    program = request.get("program")
    if not isinstance(program, str) or not program:
        return _response(exec_id, "runtime_error", "", "malformed request: missing program", 0)
    try:
        timeout_ms = min(int(request["timeout_ms"]), config.hard_timeout_ms)
        memory_limit_mb = int(request["memory_limit_mb"])
        if timeout_ms <= 0 or memory_limit_mb <= 0:
            raise ValueError("limits must be positive")
    except (KeyError, TypeError, ValueError) as exc:
        return _response(exec_id, "runtime_error", "", f"malformed request: {exc}", 0)

    blocked = check_imports(program, config.allow_imports)
    if blocked is not None:
        return _response(exec_id, "sandbox_violation", "", f"SANDBOX_VIOLATION: import of {blocked!r} is not allowed", 0)

    workdir = Path(tempfile.mkdtemp(prefix="exec-", dir=config.scratch_dir))
    started = time.monotonic()
    try:
        program_path = workdir / "program.py"
        program_path.write_text(GUARD_PRELUDE + program, encoding="utf-8")
        try:
            proc = subprocess.Popen(
                [sys.executable, "-I", str(program_path)],
                cwd=workdir,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                errors="replace",
                preexec_fn=_child_limits(timeout_ms, memory_limit_mb),
            )
        except OSError as exc:
            return _response(exec_id, "runtime_error", "", f"launch failed: {exc}", 0)

        timed_out = False
        try:
            stdout, stderr = proc.communicate(timeout=timeout_ms / 1000.0)
        except subprocess.TimeoutExpired:
            timed_out = True
            _kill_group(proc)
            stdout, stderr = proc.communicate()
        duration_ms = int((time.monotonic() - started) * 1000)

        if timed_out:
            return _response(exec_id, "timeout", stdout, f"killed after {timeout_ms}ms", max(duration_ms, timeout_ms))
        if proc.returncode == 0:
            return _response(exec_id, "ok", stdout, stderr, duration_ms)
        if "SANDBOX_VIOLATION" in stderr:
            return _response(exec_id, "sandbox_violation", stdout, stderr, duration_ms)
        return _response(exec_id, "runtime_error", stdout, stderr, duration_ms)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError, OSError):
        proc.kill()


def serve(stdin, stdout, config: RunnerConfig) -> None:
    """One response line per request line, in request order, until EOF."""
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
        except ValueError as exc:
            response = _response("", "runtime_error", "", f"malformed request line: {exc}", 0)
        else:
            response = execute_request(request, config)
        stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        stdout.flush()
