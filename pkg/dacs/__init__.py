"""Diversity-aware conformal selection."""

__version__ = "0.1.0"
