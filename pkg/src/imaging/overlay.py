"""
Colour overlays of identified layers on the analysed image.

Each layer paints the pixels its particles cover in a fixed palette colour;
pixels covered by more than one layer are painted white.
"""

import math
from typing import List, Sequence

import numpy as np

from ..core.errors import TooManyLayers
from ..core.models import GrayImage, TranslatedLattice
from ..geometry.lattice import layer_stamps

PALETTE = [
    ("red", (230, 25, 75)),
    ("green", (60, 180, 75)),
    ("blue", (0, 130, 200)),
    ("orange", (245, 130, 48)),
    ("purple", (145, 30, 180)),
    ("cyan", (70, 240, 240)),
    ("magenta", (240, 50, 230)),
    ("yellow", (255, 225, 25)),
]

NO_LAYER = -1
SHARED = -2
BASE_DIM = 0.4
# Stamp level at the visible particle radius 2 sigma.
CLAIM_LEVEL = math.exp(-2.0)


def layer_labels(
    base: GrayImage,
    layers: Sequence[TranslatedLattice],
    sigma: float,
    match_base: bool = False,
) -> np.ndarray:
    """
    Per-pixel layer ownership.

    Args:
        base: Image the layers were identified in
        layers: Translated lattices in extraction order
        sigma: PSF standard deviation in pixels
        match_base: Only label pixels where the base also shows a particle

    Returns:
        (height, width) int array: -1 none, k for layer k, -2 for two or more layers
    """
    height, width = base.pixels.shape
    labels = np.full((height, width), NO_LAYER, dtype=int)
    visible = base.pixels >= CLAIM_LEVEL if match_base else np.ones((height, width), bool)
    for k, lat in enumerate(layers):
        claimed = (layer_stamps(lat, sigma, width, height) >= CLAIM_LEVEL) & visible
        labels[claimed & (labels == NO_LAYER)] = k
        labels[claimed & (labels >= 0) & (labels != k)] = SHARED
    return labels


def render_overlay(
    base: GrayImage,
    layers: List[TranslatedLattice],
    sigma: float,
    match_base: bool = False,
) -> np.ndarray:
    """
    RGB overlay: base dimmed to 40%, layers in palette colours, overlaps white.

    Returns:
        (height, width, 3) uint8 array; base is left untouched

    Raises:
        TooManyLayers: more layers than palette colours
    """
    if len(layers) > len(PALETTE):
        raise TooManyLayers(f"{len(layers)} layers but only {len(PALETTE)} overlay colours")

    gray = np.rint(base.pixels * BASE_DIM * 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    labels = layer_labels(base, layers, sigma, match_base)
    for k in range(len(layers)):
        rgb[labels == k] = PALETTE[k][1]
    rgb[labels == SHARED] = (255, 255, 255)
    return rgb
