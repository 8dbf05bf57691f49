"""Variational Ramsey interferometry on the symmetric spin subspace."""

__version__ = "0.1.0"
