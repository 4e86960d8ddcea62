"""Modular Bayesian inverse UQ with GP emulation, Sobol' sensitivity analysis
and response-subset identifiability studies."""

__version__ = "0.1.0"
