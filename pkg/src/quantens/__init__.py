"""Hybrid quantum-classical ensemble pipeline for daily direction prediction."""

__version__ = "0.1.0"
