"""Nanosatellite attitude determination and control simulator."""

__version__ = "0.1.0"
