"""Simulated life-insurance surrender data and probabilistic classifiers for rare events."""

__version__ = "0.1.0"
