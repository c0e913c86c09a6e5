"""Proximity-attention pointer network for pickup route prediction."""

__version__ = "0.1.0"
