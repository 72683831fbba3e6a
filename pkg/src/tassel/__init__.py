"""Weakly supervised classification of object-based SITS with attention over pixel components."""

__version__ = "0.1.0"
