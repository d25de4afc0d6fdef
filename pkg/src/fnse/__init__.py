"""Stochastic Lagrangian solver for fractal Navier-Stokes equations on the torus."""
__version__ = "0.1.0"
