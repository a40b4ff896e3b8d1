"""Repair-pattern mining and pattern-guided vulnerability patch generation."""

__version__ = "0.1.0"
