"""Commute trip sharing: route enumeration, branch-and-price, clustering."""

__version__ = "0.1.0"
