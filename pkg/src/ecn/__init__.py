"""Exemplar-memory invariance learning for cross-camera retrieval under domain shift."""

__version__ = "0.1.0"
