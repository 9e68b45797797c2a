"""Susceptibility of inhomogeneous random graphs by sampling, branching-process
operators and closed-form references."""

__version__ = "0.1.0"
