"""Discrete optimal control of -Laplace(y) + sgn(y)|y|^alpha = u."""

__version__ = "0.1.0"
