"""Evidential traction learning and risk-aware MPPI navigation over uncertain terrain."""

__version__ = "0.1.0"
