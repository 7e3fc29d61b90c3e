"""Drift calculus, concentration bounds and Monte Carlo checks for hybrid jump processes."""

__version__ = "0.1.0"
