"""Deformed translations and Monte Carlo checks for planar Gibbs point processes."""
__version__ = "0.1.0"
