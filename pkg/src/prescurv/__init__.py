"""Prescribed negative Gaussian curvature by conformal change of metric."""

__version__ = "0.1.0"
