"""Fuses timestamped 2D pose detections from unsynchronized cameras into 3D tracks."""

__version__ = "0.1.0"
