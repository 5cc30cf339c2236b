"""Noise-adaptive qubit mapping on simulated multi-chip hardware."""

__version__ = "0.1.0"
