"""Discrete curl-div complexes, their solution theory and homogenisation experiments."""

__version__ = "0.1.0"
