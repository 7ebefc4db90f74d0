"""Error types raised by latsep operations."""

from typing import Optional


class LatsepError(Exception):
    """Base class for all latsep runtime errors."""

    exit_code = 2


class DegenerateBasis(LatsepError):
    """Basis vectors are zero or linearly dependent."""


class OutOfRegion(LatsepError):
    """Shape descriptor lies outside the fundamental region P."""


class BadAction(LatsepError):
    """Integer action has a determinant that is not allowed here."""


class ZeroScale(LatsepError):
    """Scale descriptor is zero."""


class NotUpperHalfPlane(LatsepError):
    """Shape descriptor has a non-positive imaginary part."""


class BadDimensions(LatsepError):
    """Image dimensions or sampling parameters are invalid."""


class EmptySpectrum(LatsepError):
    """All non-DC spectral magnitudes vanish."""


class FlatNeighborhood(LatsepError):
    """Sub-pixel refinement is undefined; carries the integer location."""

    def __init__(self, message: str, location: tuple[float, float]):
        super().__init__(message)
        self.location = location


class OutOfRange(LatsepError):
    """Argument outside the supported range."""


class CollinearPeaks(LatsepError):
    """Two spectral peaks point along the same line through the origin."""


class NoValidCandidate(LatsepError):
    """No lattice candidate could be formed from the spectrum."""


class ConstantImage(LatsepError):
    """Histogram threshold is undefined; carries a fallback threshold."""

    def __init__(self, message: str, fallback: float = 0.5):
        super().__init__(message)
        self.fallback = fallback


class IoError(LatsepError):
    """Image or document could not be read or written."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class UnsupportedFormat(LatsepError):
    """File content is not in a supported format."""


class TooManyLayers(LatsepError):
    """More layers than the overlay palette can colour."""
