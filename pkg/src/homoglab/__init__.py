"""Homogenization laboratory for non-divergence operators with an interface."""

__version__ = "0.1.0"
