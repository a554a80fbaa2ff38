"""Alternating-minimization detection for uplink massive MIMO."""

__version__ = "0.1.0"
