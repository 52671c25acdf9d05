"""Bayesian trend models for tiered compositional survey data."""

__version__ = "0.1.0"
