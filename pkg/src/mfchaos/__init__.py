"""Desk-scale laboratory for interacting particle systems and their mean-field limits."""

__version__ = "0.1.0"
