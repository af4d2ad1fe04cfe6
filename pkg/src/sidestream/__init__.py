"""Kernel classifiers whose per-sample loss is scaled by weights from a side data stream."""

__version__ = "0.1.0"
