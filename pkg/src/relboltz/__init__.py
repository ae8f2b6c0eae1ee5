"""Relativistic Boltzmann equation: truncated-kernel solver and verification suite."""

__version__ = "0.1.0"
