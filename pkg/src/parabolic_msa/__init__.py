"""Successive-approximation solvers for optimal control of semilinear parabolic PDEs."""

__version__ = "0.1.0"
