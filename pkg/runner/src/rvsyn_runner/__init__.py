"""rvsyn-runner: interpreter-side sandbox runner for the rvsyn executor."""

from .shim import DEFAULT_ALLOWED_IMPORTS, RunnerConfig, execute_request, serve

__all__ = ["DEFAULT_ALLOWED_IMPORTS", "RunnerConfig", "execute_request", "serve"]
__version__ = "0.1.0"
