"""Nonlinear system level synthesis on finite horizons."""

__version__ = "0.1.0"
