"""Generalized AEP toolkit for lossy compression and approximate matching."""

__version__ = "0.1.0"
