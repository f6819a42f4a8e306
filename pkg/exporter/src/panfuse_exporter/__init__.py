"""Exporter package: PFT emission of head predictions and features."""

__version__ = "0.1.0"
