"""
Radon transform, polar Fourier spectrum and spectral peak detection.

By the Fourier slice theorem the 1D FFT of the projection at angle alpha is
the 2D spectrum along the ray (gamma cos alpha, gamma sin alpha), so the
spectrum is sampled directly on a polar grid.
"""

import math
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..core.config import get_settings, make_console
from ..core.errors import BadDimensions, EmptySpectrum, FlatNeighborhood, OutOfRange
from ..core.models import GrayImage, PolarSpectrum, Sinogram, SpectralPeak
from ..core.parallel import parallel_map

console = make_console()
settings = get_settings()

RADIAL_SEARCH_HALF_WIDTH = 0.5  # bins
RADIAL_SEARCH_STEP = 0.01  # bins
TIE_RELATIVE = 1e-6
EMPTY_MAGNITUDE = 1e-9


def _projection_grid(width: int, height: int, step: float) -> Tuple[int, np.ndarray]:
    half = int(math.ceil(math.hypot(width, height) / 2 / step)) + 2
    return half, np.arange(-half, half + 1) * step


def _project(pixels: np.ndarray, n_angles: int, step: float) -> Sinogram:
    if n_angles < 2:
        raise BadDimensions(f"need at least 2 angles, got {n_angles}")
    if step <= 0:
        raise BadDimensions(f"offset step must be positive, got {step}")

    height, width = pixels.shape
    half, offsets = _projection_grid(width, height, step)
    n_bins = offsets.size
    ys, xs = np.mgrid[0:height, 0:width]
    xs = xs.ravel() - (width - 1) / 2
    ys = ys.ravel() - (height - 1) / 2
    values = pixels.ravel()
    angles = np.arange(n_angles) * math.pi / n_angles

    def project(alpha: float) -> np.ndarray:
        # Linear interpolation: each pixel splits its mass between the two nearest offsets.
        position = (xs * math.cos(alpha) + ys * math.sin(alpha)) / step + half
        lower = np.floor(position).astype(np.int64)
        frac = position - lower
        row = np.bincount(lower, weights=values * (1 - frac), minlength=n_bins + 1)
        row += np.bincount(lower + 1, weights=values * frac, minlength=n_bins + 1)
        return row[:n_bins]

    rows = parallel_map(project, angles)
    return Sinogram(angles=angles, offsets=offsets, values=np.vstack(rows))


def radon(img: GrayImage, n_angles: Optional[int] = None, step: Optional[float] = None) -> Sinogram:
    """
    Radon transform by linear-interpolation projection.

    Args:
        img: Input image
        n_angles: Number of angles evenly spaced over [0, pi)
        step: Offset grid step in pixels

    Returns:
        Sinogram with one row per angle; each row preserves the image mass
    """
    n_angles = n_angles or settings.n_angles
    step = step or settings.radon_step
    return _project(img.pixels, n_angles, step)


def polar_spectrum(
    img: GrayImage,
    n_angles: Optional[int] = None,
    step: Optional[float] = None,
    center: bool = True,
) -> PolarSpectrum:
    """
    |FFT| of every projection, i.e. the 2D spectrum on a polar grid.

    Args:
        img: Input image
        n_angles: Number of projection angles
        step: Offset grid step in pixels
        center: Subtract the image mean first so the DC lobe does not leak

    Returns:
        PolarSpectrum with radii in cycles per pixel
    """
    n_angles = n_angles or settings.n_angles
    step = step or settings.radon_step
    pixels = img.pixels - img.mean if center else img.pixels
    sinogram = _project(pixels, n_angles, step)

    n_bins = sinogram.offsets.size
    n_fft = 1 << int(math.ceil(math.log2(2 * n_bins)))
    magnitudes = np.abs(np.fft.rfft(sinogram.values, n=n_fft, axis=1))
    radii = np.arange(magnitudes.shape[1]) / (n_fft * step)
    return PolarSpectrum(
        angles=sinogram.angles, radii=radii, magnitudes=magnitudes, support=n_bins * step
    )


def _log_quotient_offset(left: float, center: float, right: float) -> float:
    """Offset of a sampled Gaussian's peak from the centre sample."""
    if left <= 0 or center <= 0 or right <= 0:
        raise ValueError("non-positive sample")
    log_left, log_center, log_right = math.log(left), math.log(center), math.log(right)
    denominator = 2 * (log_right + log_left - 2 * log_center)
    if abs(denominator) < 1e-12:
        raise ZeroDivisionError("flat neighbourhood")
    offset = -(log_right - log_left) / denominator
    return max(-0.5, min(0.5, offset))


def refine_peak(values: np.ndarray, x: int, y: int) -> Tuple[float, float]:
    """Log-Gaussian 3-point refinement on a raw array indexed values[y, x]."""
    height, width = values.shape
    x_hat, y_hat = float(x), float(y)
    try:
        if 0 < x < width - 1:
            x_hat += _log_quotient_offset(values[y, x - 1], values[y, x], values[y, x + 1])
        if 0 < y < height - 1:
            y_hat += _log_quotient_offset(values[y - 1, x], values[y, x], values[y + 1, x])
    except (ValueError, ZeroDivisionError) as e:
        raise FlatNeighborhood(f"cannot refine at ({x}, {y}): {e}", location=(float(x), float(y)))
    return x_hat, y_hat


def subpixel_refine(img: GrayImage, x: int, y: int) -> Tuple[float, float]:
    """
    Sub-pixel location of a local maximum at integer (x, y).

    Applies x - (log U(x+1) - log U(x-1)) / (2 (log U(x+1) + log U(x-1) - 2 log U(x)))
    per axis; exact for sampled Gaussians. Axes touching the image border are not refined.

    Raises:
        FlatNeighborhood: a sample is non-positive or the denominator vanishes
    """
    return refine_peak(img.pixels, x, y)


def radial_refine(signal: np.ndarray, gamma0: float, sigma_f: Optional[float] = None) -> float:
    """
    Period of the Gaussian impulse train that best overlaps a radial profile.

    Candidates cover gamma0 +- 0.5 bin at 0.01 bin steps; the number of impulses
    is fixed over all candidates and the profile is mirrored about zero
    (the magnitude spectrum is even), so a flat profile yields an exact tie.
    Ties resolve to the candidate nearest gamma0.

    Args:
        signal: Magnitudes along the radius, one value per bin
        gamma0: Initial period in bins
        sigma_f: Width of each impulse in bins

    Returns:
        Refined period in bins
    """
    sigma_f = sigma_f or settings.impulse_sigma
    signal = np.asarray(signal, dtype=np.float64)
    length = signal.size
    if not (0 < gamma0 < length):
        raise OutOfRange(f"gamma0={gamma0} outside (0, {length})")

    steps = int(round(RADIAL_SEARCH_HALF_WIDTH / RADIAL_SEARCH_STEP))
    periods = gamma0 + np.arange(-steps, steps + 1) * RADIAL_SEARCH_STEP
    periods = periods[periods > RADIAL_SEARCH_STEP]

    reach = gamma0 + RADIAL_SEARCH_HALF_WIDTH
    n_impulses = max(1, int((length - 1 - 7 * sigma_f) // reach))
    positions = periods[:, None] * np.arange(1, n_impulses + 1)[None, :]

    # Each impulse only sees samples within its truncated Gaussian support.
    half_window = int(math.ceil(6 * sigma_f)) + 1
    window = np.arange(-half_window, half_window + 1)
    index = np.rint(positions).astype(np.int64)[:, :, None] + window[None, None, :]
    mirrored = np.concatenate([signal[:0:-1], signal])
    inside = np.abs(index) <= length - 1
    samples = np.where(inside, mirrored[np.clip(index + length - 1, 0, mirrored.size - 1)], 0.0)
    kernel = np.exp(-((index - positions[:, :, None]) ** 2) / (2 * sigma_f**2))
    scores = (kernel * samples).sum(axis=(1, 2))

    best = scores.max()
    ties = np.flatnonzero(scores >= best - TIE_RELATIVE * abs(best))
    chosen = ties[np.argmin(np.abs(periods[ties] - gamma0))]
    return float(periods[chosen])


def _label_with_wraparound(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """8-connected components on the (angle, radius) grid; first and last angle rows touch."""
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        return labels - 1, 0

    first, last = labels[0], labels[-1]
    cols = np.arange(mask.shape[1])
    sources, targets = [], []
    for shift in (-1, 0, 1):
        other = cols + shift
        valid = (other >= 0) & (other < cols.size)
        a, b = first[cols[valid]], last[other[valid]]
        touching = (a > 0) & (b > 0)
        sources.append(a[touching] - 1)
        targets.append(b[touching] - 1)
    sources = np.concatenate(sources)
    targets = np.concatenate(targets)

    graph = coo_matrix((np.ones(sources.size), (sources, targets)), shape=(count, count))
    merged_count, merged = connected_components(graph, directed=False)
    result = np.full(labels.shape, -1)
    foreground = labels > 0
    result[foreground] = merged[labels[foreground] - 1]
    return result, merged_count


def _usable_magnitudes(spec: PolarSpectrum) -> np.ndarray:
    magnitudes = spec.magnitudes.copy()
    magnitudes[:, : settings.dc_exclusion_bins] = 0.0
    magnitudes[:, spec.radii > 0.5] = 0.0
    return magnitudes


def _choose_threshold(magnitudes: np.ndarray, J: int) -> float:
    lo, hi = 0.0, float(magnitudes.max())
    exact = None
    for _ in range(settings.bisection_iterations):
        mid = (lo + hi) / 2
        _, count = _label_with_wraparound((magnitudes >= mid) & (magnitudes > 0))
        if count > J:
            lo = mid
        else:
            hi = mid
            if count == J:
                exact = mid
    return exact if exact is not None else hi


def find_peaks(spec: PolarSpectrum, J: int) -> List[SpectralPeak]:
    """
    One peak per connected component above a bisected height threshold.

    The threshold leaves exactly J components when possible, otherwise the
    smallest threshold found with at most J. Each peak is refined along the
    angle (3-point log-quotient) and along the radius (impulse train).

    Raises:
        EmptySpectrum: no non-DC energy
    """
    if J < 1:
        raise OutOfRange(f"J must be at least 1, got {J}")
    magnitudes = _usable_magnitudes(spec)
    if magnitudes.max() <= EMPTY_MAGNITUDE:
        raise EmptySpectrum("spectrum has no energy outside the DC region")

    threshold = _choose_threshold(magnitudes, J)
    labels, count = _label_with_wraparound((magnitudes >= threshold) & (magnitudes > 0))

    n_angles = spec.angles.size
    angle_step = math.pi / n_angles
    peaks = []
    for component in range(count):
        masked = np.where(labels == component, magnitudes, -1.0)
        i, k = np.unravel_index(np.argmax(masked), masked.shape)
        magnitude = float(magnitudes[i, k])

        angle = float(spec.angles[i])
        try:
            column = spec.magnitudes[:, k]
            angle += angle_step * _log_quotient_offset(
                column[(i - 1) % n_angles], column[i], column[(i + 1) % n_angles]
            )
        except (ValueError, ZeroDivisionError):
            pass

        try:
            radius_bins = radial_refine(spec.magnitudes[i], float(k))
        except OutOfRange:
            radius_bins = float(k)
        radius = radius_bins * spec.radial_step
        if radius <= 0 or magnitude <= 0:
            continue
        peaks.append(
            SpectralPeak(radius=radius, angle=angle % math.pi, magnitude=magnitude)
        )

    peaks.sort(key=lambda p: (-p.magnitude, p.angle, p.radius))
    return peaks[:J]
