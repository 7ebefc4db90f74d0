"""
Particle detection and the re-stamping operator F.

F(U) replaces every local maximum of U by a unit-height Gaussian of fixed
width, so particles of any size and brightness contribute equally to the
spectrum and to particle counts.
"""

from typing import Optional

import numpy as np
from scipy import ndimage

from ..core.errors import ConstantImage, FlatNeighborhood
from ..core.models import GrayImage
from ..geometry.lattice import stamp_points
from .spectrum import refine_peak

HISTOGRAM_BINS = 256


def find_particles(pixels: np.ndarray, thresh: float) -> np.ndarray:
    """
    Sub-pixel centres of local maxima at or above thresh.

    Plateaus of equal maxima count once. Each maximum is refined with the
    3-point log-Gaussian formula when its neighbourhood allows it.

    Args:
        pixels: (height, width) intensities
        thresh: Minimum peak height

    Returns:
        Complex array of centres x + iy
    """
    neighbourhood_max = ndimage.maximum_filter(pixels, size=3, mode="constant", cval=0.0)
    is_peak = (pixels >= neighbourhood_max) & (pixels >= thresh) & (pixels > 0)
    labels, count = ndimage.label(is_peak, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        return np.zeros(0, dtype=complex)

    positions = ndimage.maximum_position(pixels, labels, index=np.arange(1, count + 1))
    centres = np.empty(count, dtype=complex)
    for n, (y, x) in enumerate(positions):
        try:
            x_hat, y_hat = refine_peak(pixels, int(x), int(y))
        except FlatNeighborhood as e:
            x_hat, y_hat = e.location
        centres[n] = complex(x_hat, y_hat)
    return centres


def count_particles(img: GrayImage, thresh: float = 0.5) -> int:
    """The # operator: number of particles at or above thresh."""
    return int(find_particles(img.pixels, thresh).size)


def otsu_threshold(img: GrayImage) -> float:
    """
    Threshold maximizing the between-class variance of a 256-bin histogram.

    Returns:
        Upper edge of the last background bin, in intensity units

    Raises:
        ConstantImage: the histogram has a single populated class (fallback 0.5)
    """
    values = img.pixels.ravel()
    if values.max() == values.min():
        raise ConstantImage("image is constant", fallback=0.5)

    hist, edges = np.histogram(values, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    centres = (edges[:-1] + edges[1:]) / 2
    total = hist.sum()
    total_mass = (hist * centres).sum()

    weight_bg = np.cumsum(hist)[:-1].astype(np.float64)
    weight_fg = total - weight_bg
    mass_bg = np.cumsum(hist * centres)[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_bg = mass_bg / weight_bg
        mean_fg = (total_mass - mass_bg) / weight_fg
        between = weight_bg * weight_fg * (mean_bg - mean_fg) ** 2
    between = np.where((weight_bg > 0) & (weight_fg > 0), between, 0.0)
    if between.max() <= 0:
        raise ConstantImage("histogram occupies a single bin", fallback=0.5)
    return float(edges[int(np.argmax(between)) + 1])


def restamp(
    pixels: np.ndarray, sigma: float, particle_thresh: float, denoise: bool = False
) -> np.ndarray:
    """Array form of F; see preprocess."""
    if denoise and pixels.max() > pixels.min():
        try:
            cut = otsu_threshold(GrayImage(pixels=pixels))
        except ConstantImage as e:
            cut = e.fallback
        pixels = np.where(pixels >= cut, pixels, 0.0)
    height, width = pixels.shape
    return stamp_points(find_particles(pixels, particle_thresh), sigma, width, height)


def preprocess(
    img: GrayImage,
    sigma: float,
    particle_thresh: float = 0.5,
    denoise: Optional[bool] = False,
) -> GrayImage:
    """
    Operator F: re-stamp every detected particle with a unit-height Gaussian.

    Args:
        img: Input image
        sigma: PSF standard deviation in pixels
        particle_thresh: Minimum local-maximum height
        denoise: Zero pixels below the Otsu threshold first

    Returns:
        Image of identical Gaussian particles, max-composited
    """
    return GrayImage(pixels=restamp(img.pixels, sigma, particle_thresh, bool(denoise)))
