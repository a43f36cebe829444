"""Benchmark of neural outfit compatibility and outfit generation models."""

__version__ = "0.1.0"
