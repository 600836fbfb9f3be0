"""Attention NMT with a continuous cache over translation history."""

__version__ = "0.1.0"
