"""Lifestyle risk-factor mining and cost-sensitive risk prediction for online shoppers."""

__version__ = "0.1.0"
