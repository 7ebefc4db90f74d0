"""
Configuration management for latsep.

Loads settings from environment variables (prefix ``LATSEP_``) with sensible defaults.
"""

import os

from pydantic_settings import BaseSettings
from rich.console import Console


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Runtime
    threads: int = 0  # 0 = one worker per CPU
    log_level: str = "INFO"

    # Equivalence tolerances (relative)
    tau_eq: float = 1e-9  # exact synthetic input
    tau_est: float = 1e-3  # spectrally estimated input

    # Lattice metric
    metric_w: float = 0.05
    metric_n: int = 60
    metric_refine: bool = True

    # Spectral analysis
    n_angles: int = 360
    radon_step: float = 0.5  # offset grid step in pixels
    dc_exclusion_bins: int = 2
    bisection_iterations: int = 40
    impulse_sigma: float = 1.0  # radial bins

    # Separation
    lisa_j: int = 6
    lisa_k: int = 10
    lisa_gamma: float = 10.0
    lisa_epsilon: float = 1e-8
    lisa_sigma: float = 1.35
    lisa_stop_mean: float = 0.01
    lisa_particle_thresh: float = 0.5
    lisa_residual_thresh: float = 0.25  # uncovered-particle threshold on the residual
    lisa_fill_thresh: float = 0.75  # peak of T * F(U) counting a slot as filled
    lisa_max_layers: int = 12
    lisa_refine_fit: bool = True
    lisa_denoise: bool = False

    class Config:
        env_prefix = "LATSEP_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get the global settings instance."""
    return settings


def worker_count() -> int:
    """Number of worker threads for internal parallel loops."""
    if settings.threads > 0:
        return settings.threads
    return os.cpu_count() or 1


def make_console() -> Console:
    """
    Console for human-facing diagnostics.

    Writes to stderr so stdout stays reserved for JSON output.
    """
    quiet = settings.log_level.upper() in {"QUIET", "WARNING", "ERROR"}
    return Console(stderr=True, quiet=quiet)
