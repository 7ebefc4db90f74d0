"""
Pydantic models for lattices, spectra, images and separation results.

These models provide validation and type safety for all latsep entities.
Complex values are Python ``complex`` numbers (x + iy in pixel coordinates,
x to the right and y down the image rows) and serialize to ``[re, im]``.
"""

import cmath
import math
from enum import Enum
from typing import Annotated, List, Optional

import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)

from .config import get_settings
from .errors import DegenerateBasis, OutOfRegion, ZeroScale

settings = get_settings()

SCHEMA_VERSION = "latsep/1"


def parse_complex(value):
    """Accept complex, real, ``[re, im]``, ``{"re":..,"im":..}`` or ``"re,im"``."""
    if isinstance(value, complex):
        return complex(value)
    if isinstance(value, (int, float, np.integer, np.floating)):
        return complex(float(value), 0.0)
    if isinstance(value, str):
        parts = value.replace(" ", "").split(",")
        if len(parts) != 2:
            raise ValueError(f"expected 're,im', got {value!r}")
        return complex(float(parts[0]), float(parts[1]))
    if isinstance(value, dict):
        return complex(float(value["re"]), float(value["im"]))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise ValueError(f"cannot interpret {value!r} as a complex number")


def _finite(z: complex) -> complex:
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValueError("complex components must be finite")
    return z


Complex = Annotated[
    complex,
    BeforeValidator(parse_complex),
    AfterValidator(_finite),
    PlainSerializer(lambda z: [z.real, z.imag], return_type=list),
]


def in_region(rho: complex, tol: float) -> bool:
    """Membership in P = {|z| >= 1, |Re z| <= 1/2, Im z > 0} with relative tolerance."""
    return rho.imag > 0 and abs(rho) >= 1.0 - tol and abs(rho.real) <= 0.5 + tol


class LatticeBasis(BaseModel):
    """Ordered pair of independent vectors generating a lattice."""

    model_config = ConfigDict(frozen=True)

    b1: Complex
    b2: Complex

    @model_validator(mode="after")
    def check_independent(self) -> "LatticeBasis":
        if self.b1 == 0:
            raise DegenerateBasis("b1 is zero")
        ratio = self.b2 / self.b1
        if abs(ratio.imag) <= 1e-14 * max(1.0, abs(ratio)):
            raise DegenerateBasis(f"basis vectors {self.b1} and {self.b2} are collinear")
        return self

    @property
    def orientation(self) -> float:
        """Im(b2/b1); positive for counter-clockwise ordered bases."""
        return (self.b2 / self.b1).imag

    @property
    def positive(self) -> bool:
        return abs(self.b1) <= abs(self.b2) and self.orientation > 0

    @property
    def det(self) -> float:
        """Fundamental cell area."""
        return abs((self.b1.conjugate() * self.b2).imag)


class LatticeDescriptors(BaseModel):
    """Scale descriptor beta and shape descriptor rho of a lattice."""

    model_config = ConfigDict(frozen=True)

    beta: Complex
    rho: Complex

    @model_validator(mode="after")
    def check_region(self) -> "LatticeDescriptors":
        if self.beta == 0:
            raise ZeroScale("scale descriptor beta is zero")
        if not in_region(self.rho, settings.tau_eq):
            raise OutOfRegion(f"shape descriptor {self.rho} is outside P")
        return self

    @property
    def det(self) -> float:
        """Fundamental volume |beta|^2 Im(rho)."""
        return abs(self.beta) ** 2 * self.rho.imag

    def basis(self) -> LatticeBasis:
        return LatticeBasis(b1=self.beta, b2=self.beta * self.rho)

    def to_json_dict(self) -> dict:
        return {
            "beta": [self.beta.real, self.beta.imag],
            "rho": [self.rho.real, self.rho.imag],
        }


class IntegerAction(BaseModel):
    """
    Integer matrix acting on shape descriptors.

    The action maps rho to (k3 + k4 rho) / (k1 + k2 rho) and the scale to
    beta (k1 + k2 rho).
    """

    model_config = ConfigDict(frozen=True)

    k1: int
    k2: int
    k3: int
    k4: int
    name: str = ""

    @property
    def det(self) -> int:
        return self.k1 * self.k4 - self.k2 * self.k3

    def denominator(self, rho: complex) -> complex:
        return self.k1 + self.k2 * rho

    def apply(self, rho: complex) -> complex:
        return (self.k3 + self.k4 * rho) / self.denominator(rho)

    def adjugate(self) -> "IntegerAction":
        """Action of det * inverse; undoes self up to the scalar det."""
        return IntegerAction(k1=self.k4, k2=-self.k2, k3=-self.k3, k4=self.k1)

    def __str__(self) -> str:
        return self.name or f"({self.k1},{self.k2},{self.k3},{self.k4})"


class TranslatedLattice(BaseModel):
    """A lattice shifted from the origin by mu (pixels)."""

    model_config = ConfigDict(frozen=True)

    descriptors: LatticeDescriptors
    mu: Complex = 0j

    def to_json_dict(self) -> dict:
        return {**self.descriptors.to_json_dict(), "mu": [self.mu.real, self.mu.imag]}


class Window(BaseModel):
    """Closed axis-aligned rectangle [x0, x1] x [y0, y1] in pixels."""

    model_config = ConfigDict(frozen=True)

    x0: float
    y0: float
    x1: float
    y1: float

    @classmethod
    def image(cls, width: int, height: int, margin: float = 0.0) -> "Window":
        return cls(x0=-margin, y0=-margin, x1=width - 1 + margin, y1=height - 1 + margin)

    @property
    def empty(self) -> bool:
        return self.x1 < self.x0 or self.y1 < self.y0


class Wallpaper(str, Enum):
    HEXAGONAL = "hexagonal"
    SQUARE = "square"
    RECTANGULAR = "rectangular"
    RHOMBIC = "rhombic"
    PARALLELOGRAMMIC = "parallelogrammic"


# ---------------------------------------------------------------------------
# Metric
# ---------------------------------------------------------------------------


class MetricConfig(BaseModel):
    """Parameters of the lattice-space distance."""

    model_config = ConfigDict(frozen=True)

    w: float = Field(0.05, gt=0, lt=1, description="Length/angle sensitivity weight")
    N: int = Field(60, ge=1, description="Grid resolution over [pi/3, 2pi/3]")
    refine: bool = True

    @classmethod
    def from_settings(cls, **overrides) -> "MetricConfig":
        values = {"w": settings.metric_w, "N": settings.metric_n, "refine": settings.metric_refine}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class PathKind(str, Enum):
    DIRECT = "direct"
    D1 = "D1"
    D2 = "D2"
    D3 = "D3"
    D4 = "D4"
    D5 = "D5"
    D6 = "D6"
    D7 = "D7"
    D8 = "D8"


class MetricResult(BaseModel):
    """Value of d_L and the path achieving it."""

    model_config = ConfigDict(frozen=True)

    value: float = Field(..., ge=0)
    path_kind: PathKind
    phi: Optional[float] = Field(None, ge=math.pi / 3 - 1e-12, le=2 * math.pi / 3 + 1e-12)
    phi_prime: Optional[float] = Field(None, ge=math.pi / 3 - 1e-12, le=2 * math.pi / 3 + 1e-12)


class FourTuple(BaseModel):
    """(|b1|, |b2|, theta, psi) of a minimal positive basis; angles in radians."""

    model_config = ConfigDict(frozen=True)

    b1_length: float
    b2_length: float
    theta: float
    psi: float

    def as_degrees(self) -> List[float]:
        return [self.b1_length, self.b2_length, math.degrees(self.theta), math.degrees(self.psi)]


# ---------------------------------------------------------------------------
# Images and spectra
# ---------------------------------------------------------------------------


class GrayImage(BaseModel):
    """Grayscale image with intensities in [0, 1], indexed pixels[y, x]."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    pixels: np.ndarray

    @field_validator("pixels", mode="before")
    @classmethod
    def check_pixels(cls, v):
        data = np.array(v, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        if data.min() < -1e-9 or data.max() > 1 + 1e-9:
            raise ValueError("image intensities must lie in [0, 1]")
        data = np.clip(data, 0.0, 1.0)
        data.setflags(write=False)
        return data

    @classmethod
    def zeros(cls, width: int, height: int) -> "GrayImage":
        return cls(pixels=np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def mean(self) -> float:
        return float(self.pixels.mean())


class Sinogram(BaseModel):
    """Line integrals: values[i, j] is the projection at angles[i], offsets[j]."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    angles: np.ndarray
    offsets: np.ndarray
    values: np.ndarray


class PolarSpectrum(BaseModel):
    """|FFT| of sinogram rows: magnitudes[i, k] at angles[i], radii[k] (cycles/pixel)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    angles: np.ndarray
    radii: np.ndarray
    magnitudes: np.ndarray
    support: float = Field(..., gt=0, description="Projection support length in pixels")

    @property
    def radial_step(self) -> float:
        return float(self.radii[1] - self.radii[0])


class SpectralPeak(BaseModel):
    """A refined spectral peak; frequency vector radius * e^{i angle}."""

    model_config = ConfigDict(frozen=True)

    radius: float = Field(..., gt=0)
    angle: float
    magnitude: float = Field(..., gt=0)

    @property
    def frequency(self) -> complex:
        return self.radius * cmath.exp(1j * self.angle)


# ---------------------------------------------------------------------------
# Separation
# ---------------------------------------------------------------------------


class LisaConfig(BaseModel):
    """Parameters of the layer identification and separation loop."""

    model_config = ConfigDict(frozen=True)

    J: int = Field(6, ge=2, description="Connected components in the spectrum")
    K: int = Field(10, ge=1, description="Correction iterations")
    gamma: float = Field(10.0, ge=0, description="Over-fit penalty weight")
    epsilon: float = Field(1e-8, gt=0)
    sigma: float = Field(1.35, gt=0, description="PSF standard deviation in pixels")
    stop_mean: float = Field(0.01, gt=0)
    particle_thresh: float = Field(0.5, gt=0, le=1)
    residual_thresh: float = Field(0.25, gt=0, le=1, description="Uncovered-particle threshold")
    fill_thresh: float = Field(0.75, gt=0, le=1, description="Filled-slot threshold")
    max_layers: int = Field(12, ge=1)
    refine_fit: bool = True
    denoise: bool = False
    n_angles: int = Field(360, ge=2)

    @classmethod
    def from_settings(cls, **overrides) -> "LisaConfig":
        values = {
            "J": settings.lisa_j,
            "K": settings.lisa_k,
            "gamma": settings.lisa_gamma,
            "epsilon": settings.lisa_epsilon,
            "sigma": settings.lisa_sigma,
            "stop_mean": settings.lisa_stop_mean,
            "particle_thresh": settings.lisa_particle_thresh,
            "residual_thresh": settings.lisa_residual_thresh,
            "fill_thresh": settings.lisa_fill_thresh,
            "max_layers": settings.lisa_max_layers,
            "refine_fit": settings.lisa_refine_fit,
            "denoise": settings.lisa_denoise,
            "n_angles": settings.n_angles,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class CandidateScore(BaseModel):
    """Energy of a candidate: underfit + gamma * overfit."""

    model_config = ConfigDict(frozen=True)

    underfit: float = Field(..., ge=0)
    overfit: float = Field(..., ge=0)
    total: float = Field(..., ge=0)

    @classmethod
    def combine(cls, underfit: float, overfit: float, gamma: float) -> "CandidateScore":
        return cls(underfit=underfit, overfit=overfit, total=underfit + gamma * overfit)


class Candidate(BaseModel):
    """A scored translated lattice."""

    model_config = ConfigDict(frozen=True)

    descriptors: LatticeDescriptors
    mu: Complex
    score: CandidateScore

    @property
    def lattice(self) -> TranslatedLattice:
        return TranslatedLattice(descriptors=self.descriptors, mu=self.mu)

    def sort_key(self) -> tuple:
        beta = self.descriptors.beta
        return (self.score.total, abs(beta), cmath.phase(beta))

    def to_json_dict(self) -> dict:
        return {
            **self.lattice.to_json_dict(),
            "underfit": self.score.underfit,
            "overfit": self.score.overfit,
            "total": self.score.total,
        }


class TerminationReason(str, Enum):
    CONVERGED = "converged"
    NO_CANDIDATE = "no_candidate"
    LAYER_CAP = "layer_cap"
    STALLED = "stalled"


class SeparationResult(BaseModel):
    """Layers in extraction order plus residual statistics."""

    model_config = ConfigDict(frozen=True)

    layers: List[Candidate] = Field(default_factory=list)
    residual_mean: float = Field(..., ge=0)
    iterations: int = Field(..., ge=0)
    terminated_by: TerminationReason
    underfit: float = Field(0.0, ge=0)
    overfit: float = Field(0.0, ge=0)

    def to_json_dict(self) -> dict:
        return {
            "layers": [layer.to_json_dict() for layer in self.layers],
            "residual_mean": self.residual_mean,
            "iterations": self.iterations,
            "terminated_by": self.terminated_by.value,
            "underfit": self.underfit,
            "overfit": self.overfit,
        }


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


class MaskKind(str, Enum):
    LOWER_TRIANGULAR = "lower-triangular"
    RANDOM = "random"


class MissingMask(BaseModel):
    """Removes a fraction of particles; from one layer or from all when layer is None."""

    kind: MaskKind
    fraction: float = Field(..., ge=0, lt=1)
    layer: Optional[int] = Field(None, ge=0)


class HalfPlane(str, Enum):
    LEFT = "left"
    RIGHT = "right"


class SceneLayer(BaseModel):
    """Layer as written in scene files; rho need not lie in P."""

    beta: Complex
    rho: Complex
    mu: Complex = 0j
    region: Optional[HalfPlane] = None

    @field_validator("rho")
    @classmethod
    def upper_half_plane(cls, v: complex) -> complex:
        if v.imag <= 0:
            raise ValueError("rho must have a positive imaginary part")
        return v


class SceneSpec(BaseModel):
    """Synthetic superlattice image description."""

    width: int = Field(119, ge=1)
    height: int = Field(119, ge=1)
    sigma: float = Field(1.35, gt=0)
    layers: List[SceneLayer] = Field(..., min_length=1)
    perturb_s: float = Field(0.0, ge=0)
    missing_mask: Optional[MissingMask] = None
    seed: int = 0
