"""Numerical laboratory for parameter exclusion near Collet-Eckmann parameters of z^d + c."""

__version__ = "0.1.0"
