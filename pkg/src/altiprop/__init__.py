"""Altitude-dependent path loss modeling for aerial FM spectrum measurements."""

__version__ = "0.1.0"
