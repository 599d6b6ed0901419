"""Probabilistic early-exit source separation."""

__version__ = "0.1.0"
