"""Missed-meal-announcement detection for simulated closed-loop insulin delivery."""
__version__ = "0.1.0"
