"""Bayesian Cox models for patient subgroups with graph-linked variable selection."""

__version__ = "0.1.0"
