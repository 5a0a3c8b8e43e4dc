"""Optimal detection boundaries for multi-coordinate Brownian drift changes."""

__version__ = "0.1.0"
