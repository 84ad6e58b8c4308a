"""Depth-supervised slot-attention video models at desk scale."""

__version__ = "0.1.0"
