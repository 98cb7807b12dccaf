"""Fourier neural operators for viscous Burgers trained under a discrete H^1 loss."""

__version__ = "0.1.0"
