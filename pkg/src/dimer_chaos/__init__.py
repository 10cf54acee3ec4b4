"""Chaos diagnostics for the periodically driven two-site Bose-Hubbard model."""

__version__ = "0.1.0"
