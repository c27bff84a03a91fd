"""Subelliptic analysis workbench for the Heisenberg group and model CR manifolds."""

__version__ = "0.1.0"
