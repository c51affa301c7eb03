"""Emitter-based entanglement protocols and toric-code threshold analysis."""

__version__ = "0.1.0"
