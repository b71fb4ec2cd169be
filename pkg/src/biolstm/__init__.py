"""Pedestrian pose prediction with recurrent networks and biomechanical constraints."""

__version__ = "0.1.0"
