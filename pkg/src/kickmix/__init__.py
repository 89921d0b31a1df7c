"""Kicked 2D Navier-Stokes on the rotating sphere: solver, couplings and mixing estimators."""

__version__ = "0.1.0"
