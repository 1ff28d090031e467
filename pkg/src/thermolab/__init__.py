"""Numerical laboratory for Gaussian and generalized thermostats on unit sphere bundles."""

__version__ = "0.1.0"
