"""Numerical geometry of Riemannian foliations in foliated charts."""

__version__ = "0.1.0"
