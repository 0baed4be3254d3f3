"""Protein family coupling estimation and MRF alignment."""
__version__ = "0.1.0"
