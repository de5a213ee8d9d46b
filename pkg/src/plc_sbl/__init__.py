"""Sparse Bayesian impulsive-noise mitigation for OFDM powerline receivers."""

__version__ = "0.1.0"
