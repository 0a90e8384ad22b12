"""Numerical disintegration of invariant measures for hyperbolic skew products."""

__version__ = "0.1.0"
