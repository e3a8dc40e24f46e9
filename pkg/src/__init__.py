"""Difference-in-differences across data silos that cannot share micro-data."""
