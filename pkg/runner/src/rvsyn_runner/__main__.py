"""Standalone entry point: serve the wire protocol on stdin/stdout."""

from __future__ import annotations

import argparse
import shutil
import sys
import tempfile
from pathlib import Path

from .shim import DEFAULT_ALLOWED_IMPORTS, RunnerConfig, serve


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rvsyn-runner", description="Sandboxed program runner (one JSON line per request).")
    parser.add_argument("--scratch-dir", default=None, help="working area for executions (default: a private temp dir)")
    parser.add_argument("--hard-timeout-ms", type=int, default=120_000, help="ceiling applied to per-request timeouts")
    parser.add_argument("--allow-import", action="append", default=[], help="additional top-level module to allow (repeatable)")
    args = parser.parse_args(argv)

    owned_tmp = None
    if args.scratch_dir is None:
        owned_tmp = tempfile.mkdtemp(prefix="rvsyn-runner-")
        scratch = Path(owned_tmp)
    else:
        scratch = Path(args.scratch_dir)

    config = RunnerConfig(
        scratch_dir=scratch,
        allow_imports=DEFAULT_ALLOWED_IMPORTS | frozenset(args.allow_import),
        hard_timeout_ms=args.hard_timeout_ms,
    )
    try:
        serve(sys.stdin, sys.stdout, config)
    finally:
        if owned_tmp is not None:
            shutil.rmtree(owned_tmp, ignore_errors=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
