"""latsep - lattice descriptors, lattice distances and superlattice separation."""

__version__ = "0.1.0"
