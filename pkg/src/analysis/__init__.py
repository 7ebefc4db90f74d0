"""Spectral analysis, particle detection and layer separation."""
