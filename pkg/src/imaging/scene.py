"""
Synthetic superlattice scenes.

A scene is a list of translated lattices rendered as Gaussian particles and
composited by maximum, optionally with perturbed particle positions, missing
particles, or layers restricted to one half of the image.
"""

import cmath
import math
from pathlib import Path
from typing import Callable, Dict, List, Union

import numpy as np
import orjson

from ..analysis.separation import perturb_lattice
from ..core.errors import IoError, UnsupportedFormat
from ..core.models import (
    SCHEMA_VERSION,
    GrayImage,
    HalfPlane,
    MaskKind,
    MissingMask,
    SceneLayer,
    SceneSpec,
    TranslatedLattice,
    Window,
)
from ..geometry.lattice import canonicalize, generate_points, stamp_points


def scene_lattices(spec: SceneSpec) -> List[TranslatedLattice]:
    """Ground-truth layers of a scene with canonical descriptors."""
    return [
        TranslatedLattice(descriptors=canonicalize(layer.beta, layer.rho), mu=layer.mu)
        for layer in spec.layers
    ]


def _triangle_cut(fraction: float) -> float:
    """Level a such that {x/W + 1 - y/H < a} covers the given share of the image."""
    if fraction <= 0.5:
        return math.sqrt(2 * fraction)
    return 2 - math.sqrt(2 * (1 - fraction))


def _apply_mask(
    points: np.ndarray, mask: MissingMask, width: int, height: int, rng: np.random.Generator
) -> np.ndarray:
    if mask.fraction == 0 or points.size == 0:
        return points
    if mask.kind is MaskKind.LOWER_TRIANGULAR:
        level = points.real / width + (1 - points.imag / height)
        return points[level >= _triangle_cut(mask.fraction)]
    return points[rng.random(points.size) >= mask.fraction]


def _apply_region(points: np.ndarray, region: HalfPlane, width: int) -> np.ndarray:
    middle = (width - 1) / 2
    if region is HalfPlane.LEFT:
        return points[points.real < middle]
    return points[points.real >= middle]


def generate_scene(spec: SceneSpec) -> GrayImage:
    """
    Render a scene.

    Each layer draws from its own generator seeded with (seed, layer index),
    so adding a layer leaves the others unchanged.

    Args:
        spec: Scene description

    Returns:
        Max-composited image of all layers
    """
    width, height, sigma = spec.width, spec.height, spec.sigma
    window = Window.image(width, height, margin=4 * sigma + 1)
    canvas = np.zeros((height, width))

    for index, (layer, lat) in enumerate(zip(spec.layers, scene_lattices(spec))):
        points = np.asarray(generate_points(lat, window), dtype=complex)
        if layer.region is not None:
            points = _apply_region(points, layer.region, width)
        mask = spec.missing_mask
        if mask is not None and mask.layer in (None, index):
            rng = np.random.default_rng([spec.seed, index, 1])
            points = _apply_mask(points, mask, width, height, rng)
        if spec.perturb_s > 0:
            points = perturb_lattice(points, spec.perturb_s, seed=[spec.seed, index])
        np.maximum(canvas, stamp_points(points, sigma, width, height), out=canvas)
    return GrayImage(pixels=canvas)


def load_scene(path: Union[str, Path]) -> SceneSpec:
    """
    Read a SceneSpec JSON document.

    Raises:
        IoError: the file cannot be read
        UnsupportedFormat: the file is not JSON
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", path=str(path))
    try:
        data = orjson.loads(raw)
    except orjson.JSONDecodeError as e:
        raise UnsupportedFormat(f"{path} is not valid JSON: {e}")
    return SceneSpec.model_validate(data)


def dump_scene(spec: SceneSpec) -> bytes:
    """SceneSpec as indented JSON, tagged with the schema version."""
    document = {"schema": SCHEMA_VERSION, **spec.model_dump(mode="json")}
    return orjson.dumps(document, option=orjson.OPT_INDENT_2)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _polar(radius: float, degrees: float) -> complex:
    return cmath.rect(radius, math.radians(degrees))


def _layer(beta: complex, rho: complex, mu: complex = 0j, region=None) -> SceneLayer:
    return SceneLayer(beta=beta, rho=rho, mu=mu, region=region)


def _three_lattices() -> SceneSpec:
    return SceneSpec(
        layers=[
            _layer(-9.9927 + 0.0315j, _polar(1.0014, 85), 2 - 4j),
            _layer(-4.4820 + 12.1815j, 1j, -7 - 4j),
            _layer(-4.9898 - 8.5389j, _polar(1.0298, 105), 1 - 5j),
        ]
    )


def _five_lattices() -> SceneSpec:
    return SceneSpec(
        layers=[
            _layer(11, _polar(1, 70), 2 - 5j),
            _layer(11.7378 + 2.4949j, 1j, 3 + 4j),
            _layer(3.7082 + 11.4127j, _polar(1, 80)),
            _layer(14.0954 + 5.1303j, 1j, 1 - 2j),
            _layer(11.8177 + 2.0838j, 1j),
        ]
    )


def _missing_peaks() -> SceneSpec:
    return SceneSpec(layers=[_layer(12, 1j, 4 - 3j), _layer(12, 1j, -4 + 3j)])


def _perturbed() -> SceneSpec:
    return SceneSpec(layers=[_layer(12, _polar(1, 10))], perturb_s=0.5)


def _incomplete() -> SceneSpec:
    return SceneSpec(
        layers=[
            _layer(11.6924 + 2.6994j, _polar(1, 80)),
            _layer(11.8177 + 2.0838j, 1j, 2 - 3j),
        ],
        missing_mask=MissingMask(kind=MaskKind.LOWER_TRIANGULAR, fraction=0.5, layer=1),
    )


def _dense_trap() -> SceneSpec:
    return SceneSpec(
        layers=[
            _layer(10, _polar(1, 85), 2 - 10j),
            _layer(9.9756 + 0.6976j, _polar(1, 85), -3 + 5j),
        ]
    )


def _translated_pairs() -> SceneSpec:
    return SceneSpec(
        layers=[
            _layer(12, 1j),
            _layer(11.8177 + 2.0838j, 1j, 1 + 1j),
            _layer(12, 1j, 2 - 3j),
            _layer(11.8177 + 2.0838j, 1j, 2 - 5j),
        ]
    )


def _close_particles() -> SceneSpec:
    beta = 14.7721 + 2.6047j
    return SceneSpec(layers=[_layer(beta, 1j, mu) for mu in (4 - 2j, 1 - 2j, 2 - 5j)])


def _flake() -> SceneSpec:
    return SceneSpec(layers=[_layer(b, _polar(1, 60)) for b in (10, 12, 13, 15)])


def _flower() -> SceneSpec:
    return SceneSpec(layers=[_layer(_polar(11, a), _polar(1, 60)) for a in (53, -53, 143, -143)])


def _grain_boundary() -> SceneSpec:
    return SceneSpec(
        layers=[
            _layer(-10.9881 - 12.1163j, -0.4579 + 0.8950j, -1.3794 + 9.7510j, HalfPlane.LEFT),
            _layer(-15.7326 - 4.7420j, 0.4813 + 0.8800j, 9.6287 + 9.5640j, HalfPlane.RIGHT),
        ]
    )


PRESETS: Dict[str, Callable[[], SceneSpec]] = {
    "fig7": _three_lattices,
    "fig8": _five_lattices,
    "fig10": _missing_peaks,
    "fig11": _perturbed,
    "fig12": _incomplete,
    "fig13": _dense_trap,
    "fig14": _translated_pairs,
    "fig15": _close_particles,
    "flake": _flake,
    "flower": _flower,
    "grain-boundary": _grain_boundary,
}


def preset(name: str) -> SceneSpec:
    """
    Named experiment scene.

    Raises:
        UnsupportedFormat: unknown preset name
    """
    try:
        return PRESETS[name]()
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise UnsupportedFormat(f"unknown preset {name!r}; choose one of {known}")
