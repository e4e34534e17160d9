"""Thermodynamic energy-matrix fitting for multi-round SELEX data."""

__version__ = "0.1.0"
