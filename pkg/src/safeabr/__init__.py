"""Trace-driven ABR simulation with online safety assurance for learned policies."""

__version__ = "0.1.0"
