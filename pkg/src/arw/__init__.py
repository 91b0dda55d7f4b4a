"""Activated random walks in one dimension: site-wise simulation and checks."""

__version__ = "0.1.0"
