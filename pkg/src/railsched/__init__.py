"""Deadlock-free train scheduling with receding horizons."""

__version__ = "0.1.0"
