"""Forecast-then-classify pipeline over irregular patient time series."""

__version__ = "0.1.0"
