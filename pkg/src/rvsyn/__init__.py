"""rvsyn: graph-based synthesis of execution-verified math reasoning data."""

__version__ = "0.1.0"
