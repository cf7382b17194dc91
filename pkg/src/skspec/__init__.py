"""Spectral toolkit for the stochastic damped wave equation on the 2-torus and its heat limit."""

__version__ = "0.1.0"
