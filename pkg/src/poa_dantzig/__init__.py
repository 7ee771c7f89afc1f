"""Sparse recovery and separation of composite signals with the Dantzig selector."""

__version__ = "0.1.0"
