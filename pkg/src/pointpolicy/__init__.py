"""Locality-aware visuomotor policies on point clouds."""

__version__ = "0.1.0"
