"""Numerics for controlled open quantum systems in Lindblad form."""

__version__ = "0.1.0"
