"""Statevector simulation and gradient-scaling analysis for quantum classifiers."""

__version__ = "0.1.0"
