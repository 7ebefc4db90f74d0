"""
Distance on lattice space.

d_K compares scale descriptors up to sign, d_P is the Poincaré distance on
shape descriptors up to the +-1 shift, D combines them, and d_L additionally
minimizes over the eight path families through E = {|rho| = 1}, where a
lattice has the two representations (beta, e^{i phi}) and
(e^{i phi} beta, -e^{-i phi}).
"""

import cmath
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import NotUpperHalfPlane, ZeroScale
from ..core.models import (
    FourTuple,
    LatticeBasis,
    LatticeDescriptors,
    MetricConfig,
    MetricResult,
    PathKind,
)
from .lattice import canonicalize, gauss_reduce

PHI_MIN = math.pi / 3
PHI_MAX = 2 * math.pi / 3
GOLDEN = (math.sqrt(5) - 1) / 2
REFINE_ITERATIONS = 20
ZERO_CLAMP = 1e-12

# Which of (phi, phi') each path family depends on.
_USES = {
    PathKind.DIRECT: (False, False),
    PathKind.D1: (False, True),
    PathKind.D2: (False, True),
    PathKind.D3: (True, False),
    PathKind.D4: (True, True),
    PathKind.D5: (True, True),
    PathKind.D6: (True, False),
    PathKind.D7: (True, True),
    PathKind.D8: (True, True),
}

# Path family obtained by exchanging the two arguments.
_MIRROR = {
    PathKind.DIRECT: PathKind.DIRECT,
    PathKind.D1: PathKind.D3,
    PathKind.D3: PathKind.D1,
    PathKind.D2: PathKind.D6,
    PathKind.D6: PathKind.D2,
    PathKind.D4: PathKind.D4,
    PathKind.D5: PathKind.D7,
    PathKind.D7: PathKind.D5,
    PathKind.D8: PathKind.D8,
}


def _scale_metric(beta, beta2, w: float):
    """Quotient scale distance, vectorized over numpy arrays."""
    mod1, mod2 = np.abs(beta), np.abs(beta2)
    cos = np.clip((beta * np.conj(beta2)).real / (mod1 * mod2), -1.0, 1.0)
    angle = np.arccos(cos)
    # -beta flips the angle to pi - angle; the length term is unchanged.
    angle = np.minimum(angle, math.pi - angle)
    return np.sqrt(w * (mod1 - mod2) ** 2 + (1 - w) * angle**2)


def _poincare(rho, rho2):
    ratio = (np.abs(rho - rho2) + np.abs(rho - np.conj(rho2))) / (
        2 * np.sqrt(rho.imag * rho2.imag)
    )
    return 2 * np.log(np.maximum(ratio, 1.0))


def _shape_metric(rho, rho2):
    """Quotient Poincaré distance, vectorized over numpy arrays."""
    return np.minimum(
        _poincare(rho, rho2),
        np.minimum(_poincare(rho - 1, rho2), _poincare(rho + 1, rho2)),
    )


def _product(beta, rho, beta2, rho2, w: float):
    return np.sqrt(_scale_metric(beta, beta2, w) ** 2 + _shape_metric(rho, rho2) ** 2)


def dist_scale(beta: complex, beta2: complex, w: float) -> float:
    """
    Quotient metric d_K = min(D_K(beta, beta'), D_K(-beta, beta')).

    Raises:
        ZeroScale: either scale descriptor is zero
    """
    if beta == 0 or beta2 == 0:
        raise ZeroScale("scale descriptors must be nonzero")
    return float(_scale_metric(np.complex128(beta), np.complex128(beta2), w))


def dist_shape(rho: complex, rho2: complex) -> float:
    """
    Quotient Poincaré metric d_P over rho, rho - 1, rho + 1.

    Raises:
        NotUpperHalfPlane: either argument has Im <= 0
    """
    if rho.imag <= 0 or rho2.imag <= 0:
        raise NotUpperHalfPlane(f"shape descriptors {rho}, {rho2} must have Im > 0")
    return float(_shape_metric(np.complex128(rho), np.complex128(rho2)))


def dist_product(a: LatticeDescriptors, b: LatticeDescriptors, cfg: MetricConfig) -> float:
    """D = sqrt(d_K^2 + d_P^2)."""
    return math.hypot(dist_scale(a.beta, b.beta, cfg.w), dist_shape(a.rho, b.rho))


def _path_values(
    a: LatticeDescriptors,
    b: LatticeDescriptors,
    phi: np.ndarray,
    phi_prime: np.ndarray,
    w: float,
) -> Dict[PathKind, np.ndarray]:
    """Lengths of every path family on the grid phi (rows) x phi' (columns)."""
    beta, rho = np.complex128(a.beta), np.complex128(a.rho)
    beta2, rho2 = np.complex128(b.beta), np.complex128(b.rho)

    e = np.exp(1j * phi)[:, None]
    ep = np.exp(1j * phi_prime)[None, :]
    swapped_e = -np.conj(e)
    swapped_ep = -np.conj(ep)

    to_arc = _shape_metric(rho, e)  # (beta, rho) -> (beta, e)
    from_arc = _shape_metric(ep, rho2)  # (beta', e') -> (beta', rho')

    values = {
        PathKind.D1: _product(beta, rho, beta2, ep, w) + from_arc,
        PathKind.D2: _product(beta, rho, ep * beta2, swapped_ep, w) + from_arc,
        PathKind.D3: to_arc + _product(beta, e, beta2, rho2, w),
        PathKind.D4: to_arc + _product(beta, e, beta2, ep, w) + from_arc,
        PathKind.D5: to_arc + _product(beta, e, ep * beta2, swapped_ep, w) + from_arc,
        PathKind.D6: to_arc + _product(e * beta, swapped_e, beta2, rho2, w),
        PathKind.D7: to_arc + _product(e * beta, swapped_e, beta2, ep, w) + from_arc,
        PathKind.D8: to_arc + _product(e * beta, swapped_e, ep * beta2, swapped_ep, w) + from_arc,
    }
    shape = (phi.size, phi_prime.size)
    return {kind: np.broadcast_to(v, shape) for kind, v in values.items()}


def _path_value(
    a: LatticeDescriptors, b: LatticeDescriptors, kind: PathKind, phi: float, phi_prime: float, w
) -> float:
    values = _path_values(a, b, np.array([phi]), np.array([phi_prime]), w)
    return float(values[kind][0, 0])


def _golden_section(f, lo: float, hi: float) -> Tuple[float, float]:
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(REFINE_ITERATIONS):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def _anchor_angles(a: LatticeDescriptors, b: LatticeDescriptors) -> List[float]:
    anchors = []
    for rho in (a.rho, b.rho):
        arg = cmath.phase(rho)
        for angle in (arg, math.pi - arg):
            if PHI_MIN <= angle <= PHI_MAX:
                anchors.append(angle)
    return anchors


def _sample_angles(a: LatticeDescriptors, b: LatticeDescriptors, n: int) -> np.ndarray:
    grid = PHI_MIN + np.arange(n + 1) * (math.pi / (3 * n))
    return np.unique(np.concatenate([grid, _anchor_angles(a, b)]))


def _minimize(
    a: LatticeDescriptors, b: LatticeDescriptors, cfg: MetricConfig
) -> Tuple[float, PathKind, Optional[float], Optional[float]]:
    best_value = dist_product(a, b, cfg)
    best: Tuple[float, PathKind, Optional[float], Optional[float]] = (
        best_value,
        PathKind.DIRECT,
        None,
        None,
    )

    angles = _sample_angles(a, b, cfg.N)
    for kind, grid in _path_values(a, b, angles, angles, cfg.w).items():
        i, j = np.unravel_index(np.argmin(grid), grid.shape)
        if grid[i, j] < best[0] - ZERO_CLAMP:
            best = (float(grid[i, j]), kind, float(angles[i]), float(angles[j]))

    value, kind, phi, phi_prime = best
    if cfg.refine and kind is not PathKind.DIRECT:
        uses_phi, uses_phi_prime = _USES[kind]
        half_width = math.pi / (3 * cfg.N)
        if uses_phi:
            lo, hi = max(PHI_MIN, phi - half_width), min(PHI_MAX, phi + half_width)
            x, fx = _golden_section(lambda t: _path_value(a, b, kind, t, phi_prime, cfg.w), lo, hi)
            if fx < value:
                value, phi = fx, x
        if uses_phi_prime:
            lo = max(PHI_MIN, phi_prime - half_width)
            hi = min(PHI_MAX, phi_prime + half_width)
            x, fx = _golden_section(lambda t: _path_value(a, b, kind, phi, t, cfg.w), lo, hi)
            if fx < value:
                value, phi_prime = fx, x

    uses_phi, uses_phi_prime = _USES[kind]
    return value, kind, phi if uses_phi else None, phi_prime if uses_phi_prime else None


def dist_lattice(
    a: LatticeDescriptors, b: LatticeDescriptors, cfg: Optional[MetricConfig] = None
) -> MetricResult:
    """
    Lattice-space distance d_L.

    Minimum of the direct product distance and the eight path families with
    phi, phi' sampled on an (N+1)-point grid of [pi/3, 2pi/3] (plus the
    arguments of rho and rho' when they fall in that range), optionally
    tightened by a golden-section pass. Evaluated in both argument orders so
    the result is exactly symmetric.
    """
    cfg = cfg or MetricConfig.from_settings()
    a = canonicalize(a.beta, a.rho)
    b = canonicalize(b.beta, b.rho)

    forward = _minimize(a, b, cfg)
    backward = _minimize(b, a, cfg)
    if backward[0] < forward[0] - ZERO_CLAMP:
        value, kind, phi, phi_prime = backward
        kind, phi, phi_prime = _MIRROR[kind], phi_prime, phi
    else:
        value, kind, phi, phi_prime = forward

    if value < ZERO_CLAMP:
        value = 0.0
    return MetricResult(value=value, path_kind=kind, phi=phi, phi_prime=phi_prime)


def metric_matrix(
    lattices: Sequence[LatticeDescriptors], cfg: Optional[MetricConfig] = None
) -> np.ndarray:
    """Symmetric matrix of pairwise d_L values."""
    n = len(lattices)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i, j] = matrix[j, i] = dist_lattice(lattices[i], lattices[j], cfg).value
    return matrix


def fourtuple(basis: LatticeBasis) -> FourTuple:
    """(|b1|, |b2|, theta, psi) of the reduced basis; theta in (-pi/2, pi/2], psi in (0, pi]."""
    reduced = gauss_reduce(basis)
    b1, b2 = reduced.b1, reduced.b2
    theta = cmath.phase(b1)
    if theta > math.pi / 2:
        theta -= math.pi
    elif theta <= -math.pi / 2:
        theta += math.pi
    cos = (b1 * b2.conjugate()).real / (abs(b1) * abs(b2))
    psi = math.acos(min(1.0, max(-1.0, cos)))
    return FourTuple(b1_length=abs(b1), b2_length=abs(b2), theta=theta, psi=psi)


def fourtuple_relative_difference(first: FourTuple, second: FourTuple) -> List[float]:
    """Per-component |x' - x| / |x| in percent."""
    differences = []
    for x, y in zip(first.as_degrees(), second.as_degrees()):
        delta = abs(y - x)
        if x == 0:
            differences.append(0.0 if delta == 0 else math.inf)
        else:
            differences.append(100.0 * delta / abs(x))
    return differences
