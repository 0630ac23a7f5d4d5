"""Intrinsic Bayesian optimisation on constrained domains."""

__version__ = "0.1.0"
