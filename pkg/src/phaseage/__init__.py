"""Conditional age distributions for phase-type lifetimes."""

__version__ = "0.1.0"
