"""Tests for candidate construction, scoring and the separation loop."""

import math
import time
from itertools import combinations

import numpy as np
import pytest

from src.analysis.separation import (
    candidate_from_peaks,
    correct_candidate,
    find_translation,
    fit_lattice,
    identify_best,
    lisa_run,
    perturb_lattice,
    reduce_translation,
    score_candidate,
    variational_energy,
)
from src.cli.commands import match_truth
from src.core.errors import CollinearPeaks, OutOfRange
from src.core.models import (
    Candidate,
    GrayImage,
    IntegerAction,
    LatticeBasis,
    LisaConfig,
    MetricConfig,
    SpectralPeak,
    TerminationReason,
    TranslatedLattice,
)
from src.geometry.lattice import (
    are_equivalent,
    canonicalize,
    layer_stamps,
    parentlattice,
    rasterize,
    stamp_points,
    to_descriptors,
)
from src.geometry.metric import dist_lattice
from src.imaging.scene import generate_scene, preset, scene_lattices

from .conftest import lattice


def _peak(period: float, degrees: float) -> SpectralPeak:
    return SpectralPeak(radius=1 / period, angle=math.radians(degrees), magnitude=1.0)


@pytest.fixture(scope="module")
def square_image() -> GrayImage:
    return rasterize([lattice(12, 1j, 4 - 3j)], 1.35, 119, 119)


class TestCandidates:
    def test_square_from_orthogonal_peaks(self):
        d = candidate_from_peaks(_peak(12, 0), _peak(12, 90))
        assert are_equivalent(d, canonicalize(12, 1j), tol=1e-9)

    def test_oblique_peaks(self):
        # Reciprocal of a 10 x 15 rectangular lattice rotated by 30 degrees.
        d = candidate_from_peaks(_peak(10, 30), _peak(15, 120))
        assert are_equivalent(d, canonicalize(10 * np.exp(1j * math.pi / 6), 1.5j), tol=1e-9)

    @pytest.mark.parametrize("second", [30.00001, 30 + 180 - 0.00001])
    def test_collinear(self, second):
        with pytest.raises(CollinearPeaks):
            candidate_from_peaks(_peak(12, 30), _peak(10, second))

    def test_reduce_translation(self):
        d = canonicalize(12, 1j)
        assert reduce_translation(d, 4 - 3j + 24 + 36j) == pytest.approx(4 - 3j)
        assert reduce_translation(d, 6) == pytest.approx(-6)

    def test_find_translation(self, square_image):
        mu = find_translation(canonicalize(12, 1j), square_image, 1.35)
        assert abs(mu - (4 - 3j)) < 0.25

    def test_swapped_peaks_give_the_same_lattice(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            p1 = _peak(rng.uniform(8, 20), rng.uniform(0, 180))
            p2 = _peak(rng.uniform(8, 20), rng.uniform(0, 180))
            if abs(math.sin(p1.angle - p2.angle)) < 0.1:
                continue
            assert are_equivalent(candidate_from_peaks(p1, p2), candidate_from_peaks(p2, p1))

    def test_translation_ties_resolve_to_smallest_shift(self):
        # Two equal particles six pixels apart: shifts 0 and 6 correlate equally.
        centre = 48 + 48j
        img = GrayImage(pixels=stamp_points([centre, centre + 6], 1.35, 97, 97))
        mu = find_translation(canonicalize(12, 1j), img, 1.35)
        assert abs(mu) < 1e-3

    @pytest.mark.parametrize("dx,dy", [(5, 7), (-3, 2), (11, -9)])
    def test_translation_follows_image_shift(self, square_image, dx, dy):
        d = canonicalize(12, 1j)
        before = find_translation(d, square_image, 1.35)
        rolled = GrayImage(pixels=np.roll(square_image.pixels, (dy, dx), axis=(0, 1)))
        after = find_translation(d, rolled, 1.35)
        assert abs(reduce_translation(d, after - before - complex(dx, dy))) < 0.25


class TestScoring:
    def test_exact_layer_scores_zero(self, square_image, fast_cfg):
        score = score_candidate(canonicalize(12, 1j), 4 - 3j, square_image, fast_cfg)
        assert score.underfit == pytest.approx(0.0, abs=1e-9)
        assert score.overfit == pytest.approx(0.0, abs=1e-6)

    def test_dense_lattice_overfits(self, square_image, fast_cfg):
        dense = to_descriptors(LatticeBasis(b1=12, b2=6j))
        score = score_candidate(dense, 4 - 3j, square_image, fast_cfg)
        assert score.underfit == pytest.approx(0.0, abs=1e-9)
        assert score.overfit == pytest.approx(1.0, abs=1e-6)
        assert score.total == pytest.approx(fast_cfg.gamma * score.overfit, abs=1e-6)

    def test_sparse_lattice_underfits(self, square_image, fast_cfg):
        sparse = canonicalize(24, 1j)
        score = score_candidate(sparse, 4 - 3j, square_image, fast_cfg)
        assert score.underfit > 0.5
        assert score.overfit == pytest.approx(0.0, abs=1e-6)

    def test_lattice_off_every_particle_scores_worse(self, fast_cfg):
        # Same density as both layers together, every point one pixel off a particle.
        scene = preset("fig10")
        img = generate_scene(scene)
        truth = scene_lattices(scene)[0]
        off = to_descriptors(LatticeBasis(b1=6 - 6j, b2=6 + 6j))
        true_score = score_candidate(truth.descriptors, truth.mu, img, fast_cfg)
        off_score = score_candidate(off, -3 + 3j, img, fast_cfg)
        assert off_score.underfit > true_score.underfit
        assert true_score.total < off_score.total

    def test_one_pixel_misregistration_costs_energy(self, square_image, fast_cfg):
        d = canonicalize(12, 1j)
        exact = score_candidate(d, 4 - 3j, square_image, fast_cfg)
        shifted = score_candidate(d, 5 - 3j, square_image, fast_cfg)
        assert shifted.underfit > 0.5
        assert shifted.total > exact.total

    def test_penalty_prefers_true_layer_over_dense_parent(self, fast_cfg):
        scene = preset("fig13")
        img = generate_scene(scene)
        truth = scene_lattices(scene)[0]
        dense = parentlattice(truth.descriptors, IntegerAction(k1=2, k2=0, k3=0, k4=1))

        unpenalized = fast_cfg.model_copy(update={"gamma": 0.0})
        true_score = score_candidate(truth.descriptors, truth.mu, img, unpenalized)
        dense_score = score_candidate(dense, truth.mu, img, unpenalized)
        assert dense_score.total <= true_score.total + 1e-6

        true_score = score_candidate(truth.descriptors, truth.mu, img, fast_cfg)
        dense_score = score_candidate(dense, truth.mu, img, fast_cfg)
        assert dense_score.total > true_score.total

    def test_variational_energy(self, square_image):
        exact = lattice(12, 1j, 4 - 3j)
        underfit, overfit = variational_energy(square_image, [exact], 1.35)
        assert underfit == pytest.approx(0.0, abs=1e-9)
        assert overfit == pytest.approx(0.0, abs=1e-9)

        underfit, overfit = variational_energy(square_image, [], 1.35)
        assert underfit == pytest.approx(square_image.pixels.sum())
        assert overfit == 0.0

    def test_energy_choice_matches_brute_force_integrals(self, fast_cfg):
        truth = lattice(9, 1j, 2 + 3j)
        img = rasterize([truth], 1.35, 36, 36)
        d = truth.descriptors
        halving = IntegerAction(k1=2, k2=0, k3=0, k4=1)
        candidates = [
            truth,
            TranslatedLattice(descriptors=parentlattice(d, halving), mu=truth.mu),
            TranslatedLattice(descriptors=canonicalize(18, 1j), mu=truth.mu),
            TranslatedLattice(descriptors=d, mu=truth.mu + 1.5),
        ]

        def integrals(layers):
            stamps = [layer_stamps(layer, 1.35, 36, 36) for layer in layers]
            under = over = 0.0
            for y in range(36):
                for x in range(36):
                    u = img.pixels[y, x]
                    covered = max((min(u, s[y, x]) for s in stamps), default=0.0)
                    excess = max((s[y, x] - min(u, s[y, x]) for s in stamps), default=0.0)
                    under += u - covered
                    over += excess
            return under, over

        for first, second in combinations(candidates, 2):
            expected = integrals([first, second])
            assert variational_energy(img, [first, second], 1.35) == pytest.approx(expected)

        brute = [sum(integrals([c])) for c in candidates]
        scores = [score_candidate(c.descriptors, c.mu, img, fast_cfg).total for c in candidates]
        assert int(np.argmin(scores)) == int(np.argmin(brute)) == 0

    def test_fit_lattice_corrects_scale(self, square_image, fast_cfg):
        rough = canonicalize(12.2, 1j)
        d, mu = fit_lattice(rough, 4 - 3j, square_image, fast_cfg)
        assert are_equivalent(d, canonicalize(12, 1j), tol=1e-6)
        assert mu == pytest.approx(4 - 3j, abs=1e-6)


class TestIdentification:
    def test_identify_single_layer(self, square_image, fast_cfg):
        best = identify_best(square_image, fast_cfg)
        assert isinstance(best, Candidate)
        value = dist_lattice(best.descriptors, canonicalize(12, 1j), MetricConfig()).value
        assert value < 0.01
        assert abs(reduce_translation(best.descriptors, best.mu - (4 - 3j))) < 0.5

    def test_correction_with_single_iteration_returns_input(self, square_image, fast_cfg):
        first = identify_best(square_image, fast_cfg)
        assert correct_candidate(square_image, first, fast_cfg) is first

    @pytest.mark.slow
    def test_penalty_flips_the_identified_lattice(self, fast_cfg):
        scene = preset("fig13")
        img = generate_scene(scene)
        truth = scene_lattices(scene)
        smallest_cell = min(t.descriptors.det for t in truth)

        dense = identify_best(img, fast_cfg.model_copy(update={"gamma": 0.0}))
        assert dense.descriptors.det < 0.75 * smallest_cell

        penalized = identify_best(img, fast_cfg)
        metric = MetricConfig()
        distances = [dist_lattice(penalized.descriptors, t.descriptors, metric) for t in truth]
        assert min(d.value for d in distances) <= 0.05

    def test_correction_never_worse(self, fast_cfg):
        scene = preset("fig10")
        img = generate_scene(scene)
        cfg = fast_cfg.model_copy(update={"K": 3})
        first = identify_best(img, cfg)
        corrected = correct_candidate(img, first, cfg)
        assert corrected.score.total <= first.score.total


class TestPerturbation:
    def test_spread(self):
        points = perturb_lattice([0j] * 20000, 0.5, seed=1)
        offsets = np.array(points)
        assert np.std(offsets.real) == pytest.approx(0.5, rel=0.05)
        assert np.std(offsets.imag) == pytest.approx(0.5, rel=0.05)

    def test_negative_spread(self):
        with pytest.raises(OutOfRange):
            perturb_lattice([1 + 2j], -0.5)

    def test_zero_spread_is_identity(self):
        points = [1 + 2j, 3 + 4j]
        assert perturb_lattice(points, 0.0) == points

    def test_deterministic(self):
        points = [1 + 2j, 3 + 4j, 5 + 6j]
        assert perturb_lattice(points, 1.0, seed=3) == perturb_lattice(points, 1.0, seed=3)
        assert perturb_lattice(points, 1.0, seed=3) != perturb_lattice(points, 1.0, seed=4)


class TestSeparation:
    def test_empty_image(self, fast_cfg):
        result = lisa_run(GrayImage.zeros(64, 64), fast_cfg)
        assert result.layers == []
        assert result.iterations == 0
        assert result.terminated_by is TerminationReason.CONVERGED

    def test_single_layer(self, square_image, fast_cfg):
        result = lisa_run(square_image, fast_cfg)
        assert len(result.layers) == 1
        assert result.residual_mean < fast_cfg.stop_mean
        document = result.to_json_dict()
        assert document["terminated_by"] == "converged"
        assert len(document["layers"][0]["beta"]) == 2

    def test_layer_cap(self, fast_cfg):
        img = generate_scene(preset("fig10"))
        result = lisa_run(img, fast_cfg.model_copy(update={"max_layers": 1}))
        assert len(result.layers) == 1
        assert result.terminated_by is TerminationReason.LAYER_CAP


def _recover(name: str, cfg: LisaConfig):
    scene = preset(name)
    truth = scene_lattices(scene)
    result = lisa_run(generate_scene(scene), cfg)
    matches = match_truth([layer.lattice for layer in result.layers], truth, MetricConfig())
    return result, truth, matches


@pytest.mark.slow
@pytest.mark.parametrize(
    "name,bound",
    [
        ("fig7", 0.06),
        ("fig8", 0.03),
        ("fig10", 0.01),
        ("fig12", 0.01),
        ("fig14", 0.05),
        ("fig15", 0.01),
    ],
)
def test_recovers_preset_scenes(name, bound):
    result, truth, matches = _recover(name, LisaConfig())
    assert len(result.layers) == len(truth)
    assert all(m is not None for m in matches)
    assert sorted(m["truth_index"] for m in matches) == list(range(len(truth)))
    assert max(m["d_L"] for m in matches) <= bound


@pytest.mark.slow
def test_close_translated_layers_are_told_apart():
    # Three copies of one lattice whose particles sit about 3 px apart.
    scene = preset("fig15")
    truth = scene_lattices(scene)
    result = lisa_run(generate_scene(scene), LisaConfig())
    assert len(result.layers) == 3
    d = truth[0].descriptors
    remaining = [t.mu for t in truth]
    for layer in result.layers:
        offsets = [abs(reduce_translation(d, layer.mu - mu)) for mu in remaining]
        nearest = int(np.argmin(offsets))
        assert offsets[nearest] < 0.5
        remaining.pop(nearest)


@pytest.mark.slow
@pytest.mark.parametrize("s", [0.5, 1.0])
def test_perturbed_lattice_first_layer(s):
    distances = []
    for seed in range(5):
        scene = preset("fig11").model_copy(update={"perturb_s": s, "seed": seed})
        truth = scene_lattices(scene)[0]
        result = lisa_run(generate_scene(scene), LisaConfig())
        first = result.layers[0]
        distances.append(dist_lattice(first.descriptors, truth.descriptors, MetricConfig()).value)
    assert np.mean(distances) <= 0.01


@pytest.mark.slow
def test_dense_trap_resolved_with_penalty():
    scene = preset("fig13")
    img = generate_scene(scene)
    truth = scene_lattices(scene)
    best = identify_best(img, LisaConfig())
    distances = [dist_lattice(best.descriptors, t.descriptors, MetricConfig()).value for t in truth]
    assert min(distances) <= 0.05


def _r_squared(x, y) -> float:
    return float(np.corrcoef(np.asarray(x, float), np.asarray(y, float))[0, 1] ** 2)


def _cpu_seconds(fn, *args, repeats: int = 2) -> float:
    best = math.inf
    for _ in range(repeats):
        start = time.process_time()
        fn(*args)
        best = min(best, time.process_time() - start)
    return best


@pytest.mark.slow
class TestRuntime:
    def test_three_lattice_scene_within_a_minute(self):
        img = generate_scene(preset("fig7"))
        start = time.perf_counter()
        result = lisa_run(img, LisaConfig())
        assert time.perf_counter() - start < 60.0
        assert len(result.layers) == 3

    def test_affine_in_component_count(self):
        img = generate_scene(preset("fig7"))
        counts = list(range(2, 11))
        times = [_cpu_seconds(identify_best, img, LisaConfig(J=J, K=1)) for J in counts]
        assert _r_squared(counts, times) >= 0.9

    def test_affine_in_correction_iterations(self):
        img = generate_scene(preset("fig7"))
        cfg = LisaConfig(J=3)
        first = identify_best(img, cfg)
        iterations = list(range(1, 21))
        times = [
            _cpu_seconds(correct_candidate, img, first, cfg.model_copy(update={"K": K}), repeats=1)
            for K in iterations
        ]
        assert _r_squared(iterations, times) >= 0.9

    def test_affine_in_image_area(self):
        widths = [119, 179, 239]
        times = []
        for width in widths:
            scene = preset("fig7").model_copy(update={"width": width, "height": width})
            img = generate_scene(scene)
            times.append(_cpu_seconds(identify_best, img, LisaConfig(K=1)))
        assert _r_squared([w * w for w in widths], times) >= 0.9
