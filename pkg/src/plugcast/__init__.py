"""Hierarchical forecasting of EV charging-station plug states."""

__version__ = "0.1.0"
