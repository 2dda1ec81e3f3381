"""Desk-scale N-DOP-Fe marine ecosystem simulator and identifiability laboratory."""

__version__ = "0.1.0"
