"""Desk-scale topological image-goal navigation lab."""

__version__ = "0.1.0"
