"""Numerical laboratory for one-dimensional log-gases."""

__version__ = "0.1.0"
