"""Encoder-only transformer activity recognition over ambient sensor windows."""

__version__ = "0.1.0"
