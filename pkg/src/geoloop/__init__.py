"""Geometry-conditioned segment-wise view generation with an explicit point memory."""

__version__ = "0.1.0"
