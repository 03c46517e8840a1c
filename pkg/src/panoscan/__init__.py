"""Panoramic scanpath prediction as discretized density estimation."""

__version__ = "0.1.0"
