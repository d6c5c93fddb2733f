"""Forecast-driven orchestration of shared compute between RAN and AI workloads."""

__version__ = "0.1.0"
