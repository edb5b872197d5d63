"""Weighted tensor factorization models for context-aware recommendation."""

__version__ = "0.1.0"
