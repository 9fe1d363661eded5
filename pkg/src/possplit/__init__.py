"""Positivity-preserving Lie-Trotter splitting for the stochastic heat equation."""
__version__ = "0.1.0"
