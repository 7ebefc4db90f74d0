"""
Layer identification and separation.

Greedy extraction of translated lattices from a superposed-lattice image:
1. Re-stamp every particle (operator F)
2. Build candidate lattices from pairs of spectral peaks and place each by
   cross-correlation
3. Score candidates by under-fitting plus gamma times over-fitting
4. Optionally correct the winner by re-identifying on residuals
5. Subtract the winner and repeat until the residual is (nearly) empty
"""

import math
from itertools import combinations
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from scipy import ndimage
from scipy.spatial import cKDTree

from ..core.config import get_settings, make_console
from ..core.errors import (
    CollinearPeaks,
    DegenerateBasis,
    EmptySpectrum,
    FlatNeighborhood,
    NoValidCandidate,
    OutOfRange,
    OutOfRegion,
    ZeroScale,
)
from ..core.models import (
    Candidate,
    CandidateScore,
    GrayImage,
    LatticeBasis,
    LatticeDescriptors,
    LisaConfig,
    SeparationResult,
    SpectralPeak,
    TerminationReason,
    TranslatedLattice,
    Window,
)
from ..core.parallel import parallel_map
from ..geometry.lattice import are_equivalent, generate_points, layer_stamps, to_descriptors
from .particles import find_particles, restamp
from .spectrum import find_peaks, polar_spectrum, refine_peak

console = make_console()
settings = get_settings()

COLLINEAR_ANGLE = 1e-3  # radians
TRANSLATION_STEP = 0.5  # pixels between sampled shifts inside one cell
MATCH_RADIUS = 1.5  # in units of sigma
TIE_RELATIVE = 1e-9
MIN_FIT_MATCHES = 4
TRIM_FACTOR = 2.5
MIN_FIT_RADIUS = 0.5  # pixels
FIT_ROUNDS = 3


# ---------------------------------------------------------------------------
# Candidate construction
# ---------------------------------------------------------------------------


def candidate_from_peaks(p1: SpectralPeak, p2: SpectralPeak) -> LatticeDescriptors:
    """
    Spatial lattice whose reciprocal basis is the pair of peak frequencies.

    With w1, w2 embedded as 3-vectors with zero third coordinate,
    b1 = (w2 x e3) / |(w1 x w2) . e3| and b2 = (e3 x w1) / |(w1 x w2) . e3|,
    so that b_i . w_j is +-1 on the diagonal and 0 elsewhere.

    Raises:
        CollinearPeaks: the peaks lie on one line through the origin
    """
    if abs(math.sin(p2.angle - p1.angle)) < math.sin(COLLINEAR_ANGLE):
        raise CollinearPeaks(f"peaks at angles {p1.angle:.4f} and {p2.angle:.4f} are collinear")
    w1, w2 = p1.frequency, p2.frequency
    cross = abs((w1.conjugate() * w2).imag)
    b1 = -1j * w2 / cross
    b2 = 1j * w1 / cross
    return to_descriptors(LatticeBasis(b1=b1, b2=b2))


def reduce_translation(d: LatticeDescriptors, mu: complex) -> complex:
    """Representative of mu modulo the lattice with both cell coordinates in [-1/2, 1/2)."""
    b1, b2 = d.beta, d.beta * d.rho
    basis = np.array([[b1.real, b2.real], [b1.imag, b2.imag]])
    c1, c2 = np.linalg.solve(basis, [mu.real, mu.imag])
    c1 -= math.floor(c1 + 0.5)
    c2 -= math.floor(c2 + 0.5)
    return complex(c1 * b1 + c2 * b2)


def find_translation(d: LatticeDescriptors, img: GrayImage, sigma: float) -> complex:
    """
    Translation maximizing the cross-correlation of the lattice with the image.

    Shifts are sampled over one fundamental cell at about half-pixel spacing;
    the correlation of a Gaussian-stamped lattice with the image equals the
    Gaussian-smoothed image summed over the shifted lattice points. The best
    shift is refined on the (periodic) correlation surface.

    Args:
        d: Candidate lattice
        img: Image, usually already preprocessed
        sigma: PSF standard deviation in pixels

    Returns:
        mu reduced into the cell around the origin; equal correlations resolve
        to the smallest |mu|
    """
    pixels = img.pixels
    height, width = pixels.shape
    smoothed = ndimage.gaussian_filter(pixels, sigma, mode="constant")

    b1, b2 = d.beta, d.beta * d.rho
    n1 = max(2, int(math.ceil(abs(b1) / TRANSLATION_STEP)))
    n2 = max(2, int(math.ceil(abs(b2) / TRANSLATION_STEP)))
    shifts = (np.arange(n1)[:, None] / n1) * b1 + (np.arange(n2)[None, :] / n2) * b2

    reach = abs(b1) + abs(b2)
    base = np.asarray(
        generate_points(TranslatedLattice(descriptors=d), Window.image(width, height, reach)),
        dtype=complex,
    )
    if base.size == 0:
        return 0j

    positions = base[None, :] + shifts.ravel()[:, None]
    samples = ndimage.map_coordinates(
        smoothed,
        [positions.imag.ravel(), positions.real.ravel()],
        order=1,
        mode="constant",
        cval=0.0,
    )
    surface = samples.reshape(positions.shape).sum(axis=1).reshape(n1, n2)

    best = surface.max()
    if best <= 0:
        return 0j
    ties = np.flatnonzero(surface.ravel() >= best * (1 - TIE_RELATIVE))
    flat = min(ties, key=lambda k: abs(reduce_translation(d, shifts.ravel()[k])))
    i, j = np.unravel_index(flat, surface.shape)

    padded = np.pad(surface, 1, mode="wrap")
    try:
        j_hat, i_hat = refine_peak(padded, int(j) + 1, int(i) + 1)
        i_hat, j_hat = i_hat - 1, j_hat - 1
    except FlatNeighborhood:
        i_hat, j_hat = float(i), float(j)
    return reduce_translation(d, (i_hat / n1) * b1 + (j_hat / n2) * b2)


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------


def _candidate_points(lat: TranslatedLattice, width: int, height: int) -> np.ndarray:
    return np.asarray(generate_points(lat, Window.image(width, height, 0.5)), dtype=complex)


def fill_radius(cfg: LisaConfig) -> float:
    """Largest particle offset whose product with a unit stamp still peaks at fill_thresh."""
    return 2 * cfg.sigma * math.sqrt(math.log(1 / cfg.fill_thresh))


def score_candidate(
    d: LatticeDescriptors,
    mu: complex,
    U: GrayImage,
    cfg: LisaConfig,
    processed: Optional[GrayImage] = None,
) -> CandidateScore:
    """
    Energy of the translated lattice T_mu d against image U.

    under-fitting: || F(U - T)+ (scaled by max U) * F(U) ||_2 / || F(U) * F(U) ||_2,
    the share of preprocessed particles the candidate leaves uncovered. The
    residual is re-stamped at residual_thresh, so a stamp about a pixel off
    its particle still leaves that particle uncovered.
    over-fitting: | #candidate points / (#filled slots + eps) - 1 |, where a
    slot is filled when the product of its stamp with the nearest particle of
    F(U) peaks at fill_thresh or more, i.e. the particle centre lies within
    2 sigma sqrt(ln(1 / fill_thresh)) (about 1.45 px at the defaults).

    Args:
        d: Candidate lattice
        mu: Candidate translation
        U: Image being explained
        cfg: Separation parameters
        processed: F(U) when the caller already has it

    Returns:
        CandidateScore with total = underfit + gamma * overfit
    """
    pixels = U.pixels
    height, width = pixels.shape
    FU = processed.pixels if processed is not None else restamp(
        pixels, cfg.sigma, cfg.particle_thresh, cfg.denoise
    )
    lat = TranslatedLattice(descriptors=d, mu=mu)
    stamps = layer_stamps(lat, cfg.sigma, width, height)

    remainder = np.maximum(pixels - stamps, 0.0)
    scale = pixels.max()
    if scale > 0:
        remainder = remainder / scale
    uncovered = restamp(remainder, cfg.sigma, cfg.residual_thresh)
    reference = np.linalg.norm(FU * FU)
    underfit = float(np.linalg.norm(uncovered * FU) / reference) if reference > 0 else 0.0

    points = _candidate_points(lat, width, height)
    filled = 0
    if points.size:
        centres = find_particles(FU, cfg.particle_thresh)
        if centres.size:
            tree = cKDTree(np.column_stack([points.real, points.imag]))
            distances, nearest = tree.query(np.column_stack([centres.real, centres.imag]))
            filled = np.unique(nearest[distances <= fill_radius(cfg)]).size
    overfit = abs(points.size / (filled + cfg.epsilon) - 1.0)
    return CandidateScore.combine(underfit, overfit, cfg.gamma)


def variational_energy(
    U: GrayImage, layers: Sequence[TranslatedLattice], sigma: float
) -> Tuple[float, float]:
    """
    Under- and over-fitting integrals of a layer set against U.

    underfit = sum(U - max_j min(U, T_j)), overfit = sum(max_j (T_j - min(U, T_j))).
    """
    pixels = U.pixels
    height, width = pixels.shape
    covered = np.zeros_like(pixels)
    excess = np.zeros_like(pixels)
    for lat in layers:
        stamps = layer_stamps(lat, sigma, width, height)
        common = np.minimum(pixels, stamps)
        np.maximum(covered, common, out=covered)
        np.maximum(excess, stamps - common, out=excess)
    return float((pixels - covered).sum()), float(excess.sum())


# ---------------------------------------------------------------------------
# Identification
# ---------------------------------------------------------------------------


def fit_lattice(
    d: LatticeDescriptors,
    mu: complex,
    U: GrayImage,
    cfg: LisaConfig,
    processed: Optional[GrayImage] = None,
) -> Tuple[LatticeDescriptors, complex]:
    """
    Least-squares refinement of (b1, b2, mu) from matched particles.

    Each round rounds every particle of F(U) to the integer indices of its
    nearest point k1 b1 + k2 b2 + mu under the current estimate, keeps the
    particles inside the matching radius and solves p = k1 b1 + k2 b2 + mu.
    The radius starts at 1.5 sigma and then shrinks to 2.5x the median fit
    residual (never below half a pixel), so particles of other layers drop
    out as the estimate converges.

    Returns:
        Refined (descriptors, mu), or the input when too few particles match
    """
    FU = processed.pixels if processed is not None else restamp(
        U.pixels, cfg.sigma, cfg.particle_thresh, cfg.denoise
    )
    particles = find_particles(FU, cfg.particle_thresh)
    if particles.size < MIN_FIT_MATCHES:
        return d, mu

    b1, b2, origin = d.beta, d.beta * d.rho, mu
    radius = MATCH_RADIUS * cfg.sigma
    solved = False
    for _ in range(FIT_ROUNDS):
        basis = np.array([[b1.real, b2.real], [b1.imag, b2.imag]])
        try:
            coords = np.linalg.solve(
                basis, np.vstack([(particles - origin).real, (particles - origin).imag])
            )
        except np.linalg.LinAlgError:
            break
        k = np.floor(coords + 0.5)
        matched = np.abs(particles - (k[0] * b1 + k[1] * b2 + origin)) <= radius
        design = np.column_stack([k[0][matched], k[1][matched], np.ones(int(matched.sum()))])
        if matched.sum() < MIN_FIT_MATCHES or np.linalg.matrix_rank(design) < 3:
            break
        solution, *_ = np.linalg.lstsq(design.astype(complex), particles[matched], rcond=None)
        b1, b2, origin = (complex(v) for v in solution)
        solved = True
        residual = np.abs(particles[matched] - design.astype(complex) @ solution)
        radius = float(
            np.clip(TRIM_FACTOR * np.median(residual), MIN_FIT_RADIUS, MATCH_RADIUS * cfg.sigma)
        )
    if not solved:
        return d, mu

    try:
        fitted = to_descriptors(LatticeBasis(b1=b1, b2=b2))
    except (DegenerateBasis, OutOfRegion, ZeroScale):
        return d, mu
    return fitted, reduce_translation(fitted, origin)


def _plausible(d: LatticeDescriptors, width: int, height: int, sigma: float) -> bool:
    """Particles must not overlap and both basis vectors must repeat inside the image."""
    return abs(d.beta) >= 2 * sigma and abs(d.beta * d.rho) <= max(width, height) / 2


def _lattice_candidates(FU: GrayImage, cfg: LisaConfig) -> List[LatticeDescriptors]:
    try:
        peaks = find_peaks(polar_spectrum(FU, n_angles=cfg.n_angles), cfg.J)
    except EmptySpectrum as e:
        raise NoValidCandidate(str(e))

    found: List[LatticeDescriptors] = []
    for p1, p2 in combinations(peaks, 2):
        try:
            d = candidate_from_peaks(p1, p2)
        except (CollinearPeaks, DegenerateBasis):
            continue
        if not _plausible(d, FU.width, FU.height, cfg.sigma):
            continue
        if any(are_equivalent(d, other, settings.tau_est) for other in found):
            continue
        found.append(d)
    return found


def identify_best(
    U: GrayImage, cfg: LisaConfig, processed: Optional[GrayImage] = None
) -> Candidate:
    """
    Lowest-energy translated lattice among the peak-pair candidates of F(U).

    With refine_fit every candidate is least-squares fitted after placement
    and the fit replaces it unless its energy is worse. Ties are broken on
    (total, |beta|, Arg beta).

    Raises:
        NoValidCandidate: no non-collinear peak pair gives a usable lattice
    """
    FU = processed or GrayImage(
        pixels=restamp(U.pixels, cfg.sigma, cfg.particle_thresh, cfg.denoise)
    )
    if FU.pixels.max() <= 0:
        raise NoValidCandidate("image has no particles")

    lattices = _lattice_candidates(FU, cfg)
    if not lattices:
        raise NoValidCandidate("every peak pair is collinear or implausible")

    def evaluate(d: LatticeDescriptors) -> Candidate:
        mu = find_translation(d, FU, cfg.sigma)
        placed = Candidate(descriptors=d, mu=mu, score=score_candidate(d, mu, U, cfg, FU))
        if not cfg.refine_fit:
            return placed
        fitted_d, fitted_mu = fit_lattice(d, mu, U, cfg, FU)
        if fitted_d == d and fitted_mu == mu:
            return placed
        score = score_candidate(fitted_d, fitted_mu, U, cfg, FU)
        if score.total > placed.score.total:
            return placed
        return Candidate(descriptors=fitted_d, mu=fitted_mu, score=score)

    return min(parallel_map(evaluate, lattices), key=Candidate.sort_key)


def correct_candidate(
    U: GrayImage, first: Candidate, cfg: LisaConfig, processed: Optional[GrayImage] = None
) -> Candidate:
    """
    Resample the winner by re-identifying on residuals.

    Candidate t + 1 is identified on F(U - T_t) and rescored against U; after
    K candidates (the input counts as the first) the lowest energy wins, so
    the result is never worse than the input.
    """
    FU = processed or GrayImage(
        pixels=restamp(U.pixels, cfg.sigma, cfg.particle_thresh, cfg.denoise)
    )
    height, width = U.pixels.shape
    candidates = [first]
    current = first
    for _ in range(cfg.K - 1):
        stamps = layer_stamps(current.lattice, cfg.sigma, width, height)
        residual = GrayImage(pixels=np.maximum(U.pixels - stamps, 0.0))
        try:
            found = identify_best(residual, cfg)
        except NoValidCandidate:
            break
        score = score_candidate(found.descriptors, found.mu, U, cfg, FU)
        current = Candidate(descriptors=found.descriptors, mu=found.mu, score=score)
        candidates.append(current)

    best = min(candidates, key=Candidate.sort_key)
    if best is not first:
        console.print(
            f"[cyan]  correction picked candidate {candidates.index(best) + 1} of {len(candidates)}"
        )
    return best


# ---------------------------------------------------------------------------
# Separation loop
# ---------------------------------------------------------------------------


def lisa_run(img: GrayImage, cfg: Optional[LisaConfig] = None) -> SeparationResult:
    """
    Extract lattice layers from img one at a time.

    Args:
        img: Superposed-lattice image
        cfg: Separation parameters (defaults from settings)

    Returns:
        SeparationResult with layers in extraction order
    """
    cfg = cfg or LisaConfig.from_settings()
    height, width = img.pixels.shape
    processed = GrayImage(
        pixels=restamp(img.pixels, cfg.sigma, cfg.particle_thresh, cfg.denoise)
    )
    U = processed
    residual_mean = U.mean
    layers: List[Candidate] = []
    iterations = 0
    reason = TerminationReason.CONVERGED

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task("[cyan]Separating layers...", total=cfg.max_layers)
        while residual_mean >= cfg.stop_mean:
            if len(layers) >= cfg.max_layers:
                reason = TerminationReason.LAYER_CAP
                break
            iterations += 1
            try:
                best = identify_best(U, cfg, processed=U)
            except NoValidCandidate as e:
                console.print(f"[yellow]Warning: stopping, {e}")
                reason = TerminationReason.NO_CANDIDATE
                break
            if cfg.K > 1:
                best = correct_candidate(U, best, cfg, processed=U)

            stamps = layer_stamps(best.lattice, cfg.sigma, width, height)
            remainder = np.maximum(U.pixels - stamps, 0.0)
            if remainder.mean() >= residual_mean:
                console.print("[yellow]Warning: best candidate removes nothing, stopping")
                reason = TerminationReason.STALLED
                break

            layers.append(best)
            progress.advance(task)
            console.print(
                f"[green]Layer {len(layers)}: beta={_fmt(best.descriptors.beta)} "
                f"rho={_fmt(best.descriptors.rho)} mu={_fmt(best.mu)} "
                f"E={best.score.total:.4f}"
            )
            residual_mean = float(remainder.mean())
            if residual_mean < cfg.stop_mean:
                break
            U = GrayImage(pixels=restamp(remainder, cfg.sigma, cfg.particle_thresh))
            residual_mean = U.mean

    underfit, overfit = variational_energy(
        processed, [layer.lattice for layer in layers], cfg.sigma
    )
    console.print(
        f"[green]Done: {len(layers)} layer(s), residual mean {residual_mean:.4f} "
        f"({reason.value})"
    )
    return SeparationResult(
        layers=layers,
        residual_mean=residual_mean,
        iterations=iterations,
        terminated_by=reason,
        underfit=underfit,
        overfit=overfit,
    )


def _fmt(z: complex) -> str:
    return f"{z.real:.3f}{z.imag:+.3f}i"


def perturb_lattice(
    points: Sequence[complex], s: float, seed: Union[int, Sequence[int]] = 0
) -> List[complex]:
    """
    Add i.i.d. N(0, s^2) offsets to both coordinates of every point.

    Args:
        points: Particle centres
        s: Standard deviation in pixels
        seed: Seed for numpy's default generator

    Returns:
        Perturbed points in input order

    Raises:
        OutOfRange: s is negative
    """
    if s < 0:
        raise OutOfRange(f"perturbation spread must be non-negative, got {s}")
    points = list(points)
    if s == 0 or not points:
        return points
    rng = np.random.default_rng(seed)
    offsets = rng.normal(0.0, s, size=(len(points), 2))
    return [p + complex(dx, dy) for p, (dx, dy) in zip(points, offsets)]
