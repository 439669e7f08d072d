"""Numerical verification of gradient sup-bounds for phi-caloric functions."""

__version__ = "0.1.0"
