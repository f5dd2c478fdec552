"""Reduced-basis homogenization of finite-strain hyperelastic microstructures."""

__version__ = "0.1.0"
