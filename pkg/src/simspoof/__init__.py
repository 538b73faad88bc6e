"""Desk-scale toolkit for audio spoofing detection."""

__version__ = "0.1.0"
