"""Shared fixtures for the latsep test suite."""

import cmath
import math

import pytest

from src.core.models import LisaConfig, MetricConfig, TranslatedLattice
from src.geometry.lattice import canonicalize


def polar(radius: float, degrees: float) -> complex:
    return cmath.rect(radius, math.radians(degrees))


def lattice(beta: complex, rho: complex, mu: complex = 0j) -> TranslatedLattice:
    return TranslatedLattice(descriptors=canonicalize(beta, rho), mu=mu)


@pytest.fixture
def metric_cfg() -> MetricConfig:
    return MetricConfig(w=0.05, N=60, refine=True)


@pytest.fixture
def five_lattices():
    """Two hexagonal-ish, two square and one tilted lattice with known pairwise distances."""
    return {
        "A": canonicalize(11, cmath.exp(1j * math.pi / 3)),
        "B": canonicalize(11, 1j),
        "C": canonicalize(13, 1j),
        "D": canonicalize(11, cmath.exp(1j * math.radians(61))),
        "E": canonicalize(13, cmath.exp(1j * math.radians(61))),
    }


@pytest.fixture
def square_layer() -> TranslatedLattice:
    return lattice(12, 1j, 4 - 3j)


@pytest.fixture
def fast_cfg() -> LisaConfig:
    return LisaConfig(J=6, K=1, gamma=10.0, sigma=1.35, n_angles=180)
