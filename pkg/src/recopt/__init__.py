"""Simulation and optimal-control toolkit for renewable energy communities."""

__version__ = "0.1.0"
