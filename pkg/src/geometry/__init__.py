"""Lattice algebra and the lattice-space distance."""
