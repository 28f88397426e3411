"""Numerical laboratory for solitary-wave collisions on nonlinear lattices."""

__version__ = "0.1.0"
