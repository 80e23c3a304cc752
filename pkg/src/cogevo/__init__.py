"""Seedable simulator of an evolving student agent, with data generation and evaluation."""

__version__ = "0.1.0"
