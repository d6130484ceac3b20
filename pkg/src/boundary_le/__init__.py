"""Boundary-injected absorbed particle systems in a rectangle."""

__version__ = "0.1.0"
