"""Numerical laboratory for the (N, d)-parameter Brownian sheet."""

__version__ = "0.1.0"
