"""Semiclassical water waves over a slowly varying bottom."""

__version__ = "0.1.0"
