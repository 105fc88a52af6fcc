"""Numerical certification of unbounded Kasparov-module constructions on the line."""

__version__ = "0.1.0"
