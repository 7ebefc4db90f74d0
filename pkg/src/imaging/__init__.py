"""Image files, overlays and synthetic scenes."""
