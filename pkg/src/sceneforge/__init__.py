"""Physically plausible scene-graph reconstruction from depth + instance masks."""

__version__ = "0.1.0"
