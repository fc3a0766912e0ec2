"""Differentiable view synthesis and direct visual odometry on NumPy."""

__version__ = "0.1.0"
