"""Optimization landscapes of orbit recovery under finite group actions."""

__version__ = "0.1.0"
