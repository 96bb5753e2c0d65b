"""Occlusion-robust recognition with gradient-direction features and sparse + low-rank regression."""

__version__ = "0.1.0"
