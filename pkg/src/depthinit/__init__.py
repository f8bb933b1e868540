"""Depth-aware weight initialization for deep ReLU networks."""

__version__ = "0.1.0"
