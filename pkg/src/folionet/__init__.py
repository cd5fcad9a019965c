"""Investor similarity networks from shareholder-register snapshots."""

__version__ = "0.1.0"
