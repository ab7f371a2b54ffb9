"""Numerical laboratory for recovering time-dependent collision amplitudes
from boundary and final-time measurements of a nonlinear kinetic equation."""

__version__ = "0.1.0"
