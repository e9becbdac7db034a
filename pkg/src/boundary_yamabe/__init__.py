"""Numerical laboratory for the conformal boundary Yamabe flow."""

__version__ = "0.1.0"
