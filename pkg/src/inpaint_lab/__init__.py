"""Desk-scale controllable video inpainting lab."""

__version__ = "0.1.0"
