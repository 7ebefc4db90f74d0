"""
Lattice bases, descriptors and their algebra.

A lattice is the set of integer combinations k1*b1 + k2*b2 of two independent
complex vectors. It is represented canonically by the scale descriptor
beta = b1 and the shape descriptor rho = b2/b1 of a positive minimal basis,
with rho in P = {|z| >= 1, |Re z| <= 1/2, Im z > 0}.
"""

import cmath
import math
from typing import Iterable, List, Optional, Tuple

import numpy as np

from ..core.config import get_settings
from ..core.errors import BadAction, BadDimensions, DegenerateBasis, NotUpperHalfPlane, OutOfRegion
from ..core.models import (
    GrayImage,
    IntegerAction,
    LatticeBasis,
    LatticeDescriptors,
    TranslatedLattice,
    Wallpaper,
    Window,
    in_region,
)

settings = get_settings()

MAX_REDUCTION_STEPS = 10_000

IDENTITY = IntegerAction(k1=1, k2=0, k3=0, k4=1, name="I")
T = IntegerAction(k1=1, k2=0, k3=1, k4=1, name="T")
T_INV = IntegerAction(k1=1, k2=0, k3=-1, k4=1, name="T^-1")
S = IntegerAction(k1=0, k2=1, k3=-1, k4=0, name="S")
T_INV_S = IntegerAction(k1=0, k2=1, k3=-1, k4=-1, name="T^-1 S")
TS = IntegerAction(k1=0, k2=1, k3=-1, k4=1, name="TS")
ST = IntegerAction(k1=1, k2=1, k3=-1, k4=0, name="ST")
TST = IntegerAction(k1=1, k2=1, k3=0, k4=1, name="TST")
ST_INV = IntegerAction(k1=-1, k2=1, k3=-1, k4=0, name="ST^-1")
STS = IntegerAction(k1=-1, k2=1, k3=0, k4=-1, name="STS")

# Rows of the boundary table of P, keyed by where rho sits.
_INTERIOR_ACTIONS = [IDENTITY]
_LEFT_EDGE_ACTIONS = [IDENTITY, T]
_RIGHT_EDGE_ACTIONS = [IDENTITY, T_INV]
_ARC_ACTIONS = [IDENTITY, S]
_LEFT_CORNER_ACTIONS = [IDENTITY, S, T, T_INV_S, ST, TST]
_RIGHT_CORNER_ACTIONS = [IDENTITY, S, T_INV, TS, ST_INV, STS]


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _tolerance(tol: Optional[float]) -> float:
    return settings.tau_eq if tol is None else tol


def gauss_reduce(basis: LatticeBasis) -> LatticeBasis:
    """
    Lagrange-Gauss reduction to a positive minimal basis of the same lattice.

    Args:
        basis: Any basis of independent vectors

    Returns:
        Basis with |b1| <= |b2| <= |b1 +- b2| and Im(b2/b1) > 0
    """
    b1, b2 = basis.b1, basis.b2
    if abs(b2) < abs(b1):
        b1, b2 = b2, b1

    for _ in range(MAX_REDUCTION_STEPS):
        q = _round_half_away((b2 / b1).real)
        b2 = b2 - q * b1
        if abs(b2) < abs(b1):
            b1, b2 = b2, b1
            continue
        break
    else:
        raise DegenerateBasis(f"reduction did not converge for {basis.b1}, {basis.b2}")

    if (b2 / b1).imag < 0:
        b2 = -b2
    return LatticeBasis(b1=b1, b2=b2)


def is_minimal(basis: LatticeBasis) -> bool:
    """True iff max(|b1|, |b2|) <= |b1 + b2| and <= |b1 - b2|."""
    longest = max(abs(basis.b1), abs(basis.b2)) * (1 - 1e-12)
    return longest <= abs(basis.b1 + basis.b2) and longest <= abs(basis.b1 - basis.b2)


def to_descriptors(basis: LatticeBasis) -> LatticeDescriptors:
    """Canonical (beta, rho) of the lattice generated by basis."""
    reduced = gauss_reduce(basis)
    return LatticeDescriptors(beta=reduced.b1, rho=reduced.b2 / reduced.b1)


def canonicalize(beta: complex, rho: complex) -> LatticeDescriptors:
    """Descriptors of Λ(beta, beta*rho) for any rho in the upper half plane."""
    if rho.imag <= 0:
        raise NotUpperHalfPlane(f"rho {rho} is not in the upper half plane")
    return to_descriptors(LatticeBasis(b1=beta, b2=beta * rho))


def equivalent_shape_actions(
    rho: complex, tol: Optional[float] = None
) -> List[Tuple[IntegerAction, complex]]:
    """
    Integer actions mapping rho to an equivalent shape descriptor inside P.

    Args:
        rho: Shape descriptor in P
        tol: Relative boundary tolerance (defaults to tau_eq)

    Returns:
        (action, rho') pairs; identity first. Coinciding rho' values are kept.
    """
    tol = _tolerance(tol)
    if not in_region(rho, tol):
        raise OutOfRegion(f"shape descriptor {rho} is outside P")

    on_left = abs(rho.real + 0.5) <= tol
    on_right = abs(rho.real - 0.5) <= tol
    on_arc = abs(abs(rho) - 1.0) <= tol

    if on_arc and on_left:
        actions = _LEFT_CORNER_ACTIONS
    elif on_arc and on_right:
        actions = _RIGHT_CORNER_ACTIONS
    elif on_arc:
        actions = _ARC_ACTIONS
    elif on_left:
        actions = _LEFT_EDGE_ACTIONS
    elif on_right:
        actions = _RIGHT_EDGE_ACTIONS
    else:
        actions = _INTERIOR_ACTIONS
    return [(action, action.apply(rho)) for action in actions]


def are_equivalent(
    a: LatticeDescriptors, b: LatticeDescriptors, tol: Optional[float] = None
) -> bool:
    """
    Whether two descriptor pairs describe the same lattice.

    Tries every action of the boundary table for a.rho; the scale follows as
    beta' = e^{i Arg(k1 + k2 rho)} beta, up to sign.
    """
    tol = _tolerance(tol)
    scale_tol = tol * abs(b.beta)
    shape_tol = tol * max(1.0, abs(b.rho))
    for action, rho_prime in equivalent_shape_actions(a.rho, tol):
        if abs(rho_prime - b.rho) > shape_tol:
            continue
        rotation = cmath.exp(1j * cmath.phase(action.denominator(a.rho)))
        beta_prime = rotation * a.beta
        if abs(beta_prime - b.beta) <= scale_tol or abs(beta_prime + b.beta) <= scale_tol:
            return True
    return False


def generate_points(lat: TranslatedLattice, window: Window) -> List[complex]:
    """All points k1*beta + k2*beta*rho + mu inside the closed window."""
    if window.empty:
        return []
    return list(_points_array(lat, window))


def _points_array(lat: TranslatedLattice, window: Window) -> np.ndarray:
    beta = lat.descriptors.beta
    b2 = beta * lat.descriptors.rho
    basis = np.array([[beta.real, b2.real], [beta.imag, b2.imag]])
    inverse = np.linalg.inv(basis)

    corners = np.array(
        [
            [window.x0, window.x0, window.x1, window.x1],
            [window.y0, window.y1, window.y0, window.y1],
        ]
    ) - np.array([[lat.mu.real], [lat.mu.imag]])
    coeffs = inverse @ corners
    lo = np.floor(coeffs.min(axis=1)).astype(int) - 1
    hi = np.ceil(coeffs.max(axis=1)).astype(int) + 1

    k1, k2 = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    points = k1.ravel() * beta + k2.ravel() * b2 + lat.mu
    eps = 1e-9
    inside = (
        (points.real >= window.x0 - eps)
        & (points.real <= window.x1 + eps)
        & (points.imag >= window.y0 - eps)
        & (points.imag <= window.y1 + eps)
    )
    return points[inside]


def stamp_points(points: Iterable[complex], sigma: float, width: int, height: int) -> np.ndarray:
    """
    Max-composite a unit-height Gaussian of std sigma at every point.

    Args:
        points: Particle centres in pixel coordinates
        sigma: PSF standard deviation in pixels
        width: Canvas width
        height: Canvas height

    Returns:
        (height, width) float array with values in [0, 1]
    """
    canvas = np.zeros((height, width))
    pts = np.asarray(list(points), dtype=complex)
    if pts.size == 0:
        return canvas

    radius = int(math.ceil(4 * sigma))
    margin = radius + 1
    keep = (
        (pts.real > -margin)
        & (pts.real < width - 1 + margin)
        & (pts.imag > -margin)
        & (pts.imag < height - 1 + margin)
    )
    pts = pts[keep]
    if pts.size == 0:
        return canvas

    px, py = pts.real, pts.imag
    offsets = np.arange(-radius, radius + 1)
    shape = (pts.size, offsets.size, offsets.size)
    xs = np.broadcast_to(np.rint(px).astype(int)[:, None, None] + offsets[None, None, :], shape)
    ys = np.broadcast_to(np.rint(py).astype(int)[:, None, None] + offsets[None, :, None], shape)
    values = np.exp(
        -((xs - px[:, None, None]) ** 2 + (ys - py[:, None, None]) ** 2) / (2 * sigma**2)
    )
    inside = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    np.maximum.at(canvas, (ys[inside], xs[inside]), values[inside])
    return canvas


def layer_stamps(lat: TranslatedLattice, sigma: float, width: int, height: int) -> np.ndarray:
    """Stamped image of a single translated lattice."""
    window = Window.image(width, height, margin=4 * sigma + 1)
    return stamp_points(_points_array(lat, window), sigma, width, height)


def rasterize(
    lattices: List[TranslatedLattice], sigma: float, width: int, height: int
) -> GrayImage:
    """
    Render translated lattices as Gaussian particles, composited by maximum.

    Raises:
        BadDimensions: width or height below 1, or sigma not positive
    """
    if width < 1 or height < 1:
        raise BadDimensions(f"invalid image size {width}x{height}")
    if sigma <= 0:
        raise BadDimensions(f"sigma must be positive, got {sigma}")
    canvas = np.zeros((height, width))
    for lat in lattices:
        np.maximum(canvas, layer_stamps(lat, sigma, width, height), out=canvas)
    return GrayImage(pixels=canvas)


def reciprocal(d: LatticeDescriptors) -> LatticeDescriptors:
    """Reciprocal lattice [beta e^{-i pi/2} / det, rho], canonicalized."""
    return canonicalize(d.beta * -1j / d.det, d.rho)


def classify_wallpaper(rho: complex, tol: Optional[float] = None) -> Wallpaper:
    """Lattice symmetry class from the shape descriptor; first matching case wins."""
    tol = _tolerance(tol)
    if not in_region(rho, tol):
        raise OutOfRegion(f"shape descriptor {rho} is outside P")
    scale = max(1.0, abs(rho))
    corner = complex(0.5, math.sqrt(3) / 2)
    if min(abs(rho - corner), abs(rho + corner.conjugate())) <= tol * scale:
        return Wallpaper.HEXAGONAL
    if abs(rho - 1j) <= tol * scale:
        return Wallpaper.SQUARE
    if abs(rho.real) <= tol:
        return Wallpaper.RECTANGULAR
    if abs(abs(rho.real) - 0.5) <= tol or abs(abs(rho) - 1.0) <= tol:
        return Wallpaper.RHOMBIC
    return Wallpaper.PARALLELOGRAMMIC


def sublattice(d: LatticeDescriptors, a: IntegerAction) -> LatticeDescriptors:
    """
    Sub-lattice with basis (k1 b1 + k2 b2, k3 b1 + k4 b2).

    Raises:
        BadAction: det(a) <= 0
    """
    if a.det <= 0:
        raise BadAction(f"sub-lattice action {a} has determinant {a.det}")
    scale = a.denominator(d.rho)
    return canonicalize(d.beta * scale, a.apply(d.rho))


def parentlattice(d: LatticeDescriptors, a: IntegerAction) -> LatticeDescriptors:
    """
    Parent lattice: the sub-lattice of the same action scaled by 1/det.

    Raises:
        BadAction: det(a) <= 0
    """
    if a.det <= 0:
        raise BadAction(f"parent-lattice action {a} has determinant {a.det}")
    scale = a.denominator(d.rho) / a.det
    return canonicalize(d.beta * scale, a.apply(d.rho))


def easy_sublattice_families(d: LatticeDescriptors, n: int) -> List[LatticeDescriptors]:
    """
    The two directly enumerable sub-lattice families.

    [m beta, rho/m] for m <= n when |rho| >= n, and [beta, m rho] for m <= n
    when |Re rho| <= 1/(2n). Duplicates (by equivalence) are dropped.
    """
    if n < 1:
        raise BadAction(f"family size must be at least 1, got {n}")
    found: List[LatticeDescriptors] = []

    def add(candidate: LatticeDescriptors):
        if not any(are_equivalent(candidate, other) for other in found):
            found.append(candidate)

    if abs(d.rho) >= n:
        for m in range(1, n + 1):
            add(canonicalize(m * d.beta, d.rho / m))
    if abs(d.rho.real) <= 1 / (2 * n):
        for m in range(1, n + 1):
            add(canonicalize(d.beta, m * d.rho))
    return found
