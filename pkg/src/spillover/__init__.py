"""Causal effects and sensitivity analyses under partial interference."""

__version__ = "0.1.0"
