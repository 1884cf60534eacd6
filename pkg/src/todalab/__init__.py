"""Numerical and symbolic laboratory for the sl3 Toda conformal field theory."""

__version__ = "0.1.0"
