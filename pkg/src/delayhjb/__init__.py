"""Optimal consumption with distributed delay and a positivity constraint."""

__version__ = "0.1.0"
