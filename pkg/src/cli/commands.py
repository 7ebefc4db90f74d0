"""
CLI commands for latsep.

Provides commands for generating synthetic scenes, comparing lattices,
inspecting spectra and separating superposed lattice layers.

Machine-readable results go to stdout as JSON; progress and errors go to
stderr through the rich console.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import orjson
import typer
from pydantic import ValidationError
from rich.table import Table

from ..analysis.separation import lisa_run
from ..analysis.spectrum import find_peaks, polar_spectrum
from ..core.config import get_settings, make_console
from ..core.errors import EmptySpectrum, LatsepError
from ..core.models import (
    SCHEMA_VERSION,
    GrayImage,
    LatticeBasis,
    LatticeDescriptors,
    LisaConfig,
    MetricConfig,
    TranslatedLattice,
    parse_complex,
)
from ..geometry.lattice import are_equivalent, canonicalize, classify_wallpaper, to_descriptors
from ..geometry.metric import (
    dist_lattice,
    dist_scale,
    dist_shape,
    fourtuple,
    fourtuple_relative_difference,
    metric_matrix,
)
from ..imaging.overlay import PALETTE, render_overlay
from ..imaging.pgm import load_image, save_image, save_rgb
from ..imaging.scene import dump_scene, generate_scene, load_scene, preset, scene_lattices

app = typer.Typer(
    name="latsep",
    help="latsep - Lattice descriptors, lattice distances and superlattice separation",
    add_completion=False,
)
console = make_console()
settings = get_settings()

BASIS_HELP = 'Basis as "re,im;re,im" (b1;b2)'


def _usage_error_base() -> type:
    """Root of the usage-error hierarchy of the click build typer dispatches through."""
    return next(c for c in typer.BadParameter.__mro__ if c.__name__ == "ClickException")


UsageFailure = _usage_error_base()


def emit(payload: Dict[str, Any]):
    """Print a versioned JSON document to stdout."""
    document = {"schema": SCHEMA_VERSION, **payload}
    typer.echo(orjson.dumps(document, option=orjson.OPT_SERIALIZE_NUMPY).decode())


def write_json(path: Path, payload: Dict[str, Any]):
    document = {"schema": SCHEMA_VERSION, **payload}
    try:
        path.write_bytes(orjson.dumps(document, option=orjson.OPT_INDENT_2))
    except OSError as e:
        raise LatsepError(f"cannot write {path}: {e}")


def fail(e: Exception):
    """Report a runtime error and exit with code 2."""
    console.print(f"[bold red]Error: {e}[/bold red]")
    raise typer.Exit(2)


def parse_basis(text: str, option: str) -> LatticeBasis:
    """
    Parse "re,im;re,im" into a basis.

    Malformed text is a usage error; a degenerate basis raises DegenerateBasis.
    """
    parts = text.split(";")
    if len(parts) != 2:
        raise typer.BadParameter(
            f"expected two vectors separated by ';', got {text!r}", param_hint=option
        )
    try:
        b1, b2 = (parse_complex(part) for part in parts)
    except ValueError as e:
        raise typer.BadParameter(str(e), param_hint=option)
    return LatticeBasis(b1=b1, b2=b2)


def _lattice_entry(item: Dict[str, Any]) -> LatticeDescriptors:
    if "b1" in item and "b2" in item:
        return to_descriptors(LatticeBasis(b1=item["b1"], b2=item["b2"]))
    return canonicalize(parse_complex(item["beta"]), parse_complex(item["rho"]))


def match_truth(
    found: Sequence[TranslatedLattice], truth: Sequence[TranslatedLattice], cfg: MetricConfig
) -> List[Optional[Dict[str, float]]]:
    """
    Greedy minimal-d_L assignment of found layers to ground-truth layers.

    Returns:
        Per found layer, {"truth_index", "d_L"} or None when it stays unmatched
    """
    pairs = sorted(
        (dist_lattice(f.descriptors, t.descriptors, cfg).value, i, j)
        for i, f in enumerate(found)
        for j, t in enumerate(truth)
    )
    matches: List[Optional[Dict[str, float]]] = [None] * len(found)
    used = set()
    for value, i, j in pairs:
        if matches[i] is None and j not in used:
            matches[i] = {"truth_index": j, "d_L": value}
            used.add(j)
    return matches


@app.command()
def generate(
    spec: Path = typer.Option(..., "--spec", help="Scene description (JSON)"),
    out: Path = typer.Option(..., "--out", help="Output image (.pgm or .png)"),
):
    """
    Render a synthetic superlattice scene.
    """
    try:
        scene = load_scene(spec)
        img = generate_scene(scene)
        save_image(img, out)
    except (LatsepError, ValidationError) as e:
        fail(e)

    console.print(f"[green]Wrote {scene.width}x{scene.height} scene to {out}")
    emit(
        {
            "out": str(out),
            "width": scene.width,
            "height": scene.height,
            "sigma": scene.sigma,
            "layers": [lat.to_json_dict() for lat in scene_lattices(scene)],
        }
    )


@app.command()
def metric(
    a: str = typer.Option(..., "--a", help=BASIS_HELP),
    b: str = typer.Option(..., "--b", help=BASIS_HELP),
    w: Optional[float] = typer.Option(None, "--w", help="Length/angle weight in (0, 1)"),
    n: Optional[int] = typer.Option(None, "--N", min=1, help="Angle grid resolution"),
    refine: Optional[bool] = typer.Option(
        None, "--refine/--no-refine", help="Golden-section refinement of the path angles"
    ),
):
    """
    Lattice-space distance between two bases, with the 4-tuple comparison.
    """
    basis_a = parse_basis(a, "--a")
    basis_b = parse_basis(b, "--b")
    try:
        cfg = MetricConfig.from_settings(w=w, N=n, refine=refine)
        da, db = to_descriptors(basis_a), to_descriptors(basis_b)
        result = dist_lattice(da, db, cfg)
        tuple_a, tuple_b = fourtuple(basis_a), fourtuple(basis_b)
        payload = {
            "d_L": result.value,
            "path": result.path_kind.value,
            "phi": result.phi,
            "phi_prime": result.phi_prime,
            "d_K": dist_scale(da.beta, db.beta, cfg.w),
            "d_P": dist_shape(da.rho, db.rho),
            "canonical_a": da.to_json_dict(),
            "canonical_b": db.to_json_dict(),
            "fourtuple_a": tuple_a.as_degrees(),
            "fourtuple_b": tuple_b.as_degrees(),
            "fourtuple_difference_percent": fourtuple_relative_difference(tuple_a, tuple_b),
        }
    except (LatsepError, ValidationError) as e:
        fail(e)

    emit(payload)


@app.command()
def equiv(
    a: str = typer.Option(..., "--a", help=BASIS_HELP),
    b: str = typer.Option(..., "--b", help=BASIS_HELP),
    tol: Optional[float] = typer.Option(
        None, "--tol", help="Relative tolerance (default: LATSEP_TAU_EQ)"
    ),
):
    """
    Decide whether two bases generate the same lattice.
    """
    basis_a = parse_basis(a, "--a")
    basis_b = parse_basis(b, "--b")
    try:
        da, db = to_descriptors(basis_a), to_descriptors(basis_b)
        payload = {
            "equivalent": are_equivalent(da, db, tol),
            "canonical_a": da.to_json_dict(),
            "canonical_b": db.to_json_dict(),
            "wallpaper_a": classify_wallpaper(da.rho).value,
            "wallpaper_b": classify_wallpaper(db.rho).value,
        }
    except (LatsepError, ValidationError) as e:
        fail(e)
    emit(payload)


@app.command()
def matrix(
    lattices: Path = typer.Option(
        ..., "--lattices", help='JSON list of {"beta", "rho"} or {"b1", "b2"} entries'
    ),
    w: Optional[float] = typer.Option(None, "--w", help="Length/angle weight in (0, 1)"),
    n: Optional[int] = typer.Option(None, "--N", min=1, help="Angle grid resolution"),
):
    """
    Pairwise lattice-space distances of a list of lattices.
    """
    try:
        try:
            items = orjson.loads(lattices.read_bytes())
        except OSError as e:
            raise LatsepError(f"cannot read {lattices}: {e}")
        except orjson.JSONDecodeError as e:
            raise LatsepError(f"{lattices} is not valid JSON: {e}")
        if not isinstance(items, list):
            raise LatsepError(f"{lattices} must contain a JSON list")
        descriptors = [_lattice_entry(item) for item in items]
        cfg = MetricConfig.from_settings(w=w, N=n)
        values = metric_matrix(descriptors, cfg)
    except (LatsepError, ValidationError, KeyError, TypeError, ValueError) as e:
        fail(e)

    table = Table(show_header=True, header_style="bold cyan")
    table.add_column("", style="dim")
    for i in range(len(descriptors)):
        table.add_column(str(i), justify="right", style="green")
    for i, row in enumerate(values):
        table.add_row(str(i), *(f"{v:.4f}" for v in row))
    console.print(table)

    emit({"lattices": [d.to_json_dict() for d in descriptors], "matrix": values.tolist()})


@app.command()
def spectrum(
    input_path: Path = typer.Option(..., "--in", help="Input image (.pgm or .png)"),
    out: Path = typer.Option(..., "--out", help="Log-scaled polar spectrum image"),
    peaks_path: Optional[Path] = typer.Option(None, "--peaks", help="Write the peak list here"),
    j: Optional[int] = typer.Option(None, "--J", min=1, help="Connected components to keep"),
    n_angles: Optional[int] = typer.Option(None, "--angles", min=2, help="Projection angles"),
):
    """
    Polar Fourier spectrum of an image and its strongest peaks.

    Rows of the output image are angles, columns are radii.
    """
    try:
        img = load_image(input_path)
        spec = polar_spectrum(img, n_angles=n_angles)
        scaled = np.log1p(spec.magnitudes)
        top = scaled.max()
        save_image(GrayImage(pixels=scaled / top if top > 0 else scaled), out)
        try:
            peaks = find_peaks(spec, j or settings.lisa_j)
        except EmptySpectrum as e:
            console.print(f"[yellow]Warning: {e}")
            peaks = []
        payload = {
            "n_angles": int(spec.angles.size),
            "n_radii": int(spec.radii.size),
            "peaks": [
                {**p.model_dump(), "period": 1.0 / p.radius} for p in peaks
            ],
        }
        if peaks_path is not None:
            write_json(peaks_path, payload)
    except (LatsepError, ValidationError) as e:
        fail(e)

    console.print(f"[green]Found {len(peaks)} peak(s)")
    emit(payload)


@app.command()
def separate(
    input_path: Path = typer.Option(..., "--in", help="Input image (.pgm or .png)"),
    j: Optional[int] = typer.Option(None, "--J", min=2, help="Spectrum components to keep"),
    k: Optional[int] = typer.Option(None, "--K", min=1, help="Correction iterations"),
    gamma: Optional[float] = typer.Option(None, "--gamma", min=0.0, help="Over-fit penalty"),
    sigma: Optional[float] = typer.Option(None, "--sigma", help="PSF standard deviation (px)"),
    denoise: Optional[bool] = typer.Option(
        None, "--denoise/--no-denoise", help="Otsu background removal before detection"
    ),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the result JSON here"),
    overlay: Optional[Path] = typer.Option(None, "--overlay", help="Overlay image (.ppm or .png)"),
    truth: Optional[Path] = typer.Option(
        None, "--truth", help="Scene JSON to compare the recovered layers with"
    ),
):
    """
    Identify and separate the lattice layers of a superposed-lattice image.
    """
    try:
        img = load_image(input_path)
        cfg = LisaConfig.from_settings(J=j, K=k, gamma=gamma, sigma=sigma, denoise=denoise)
        console.print(f"[cyan]Separating {input_path} (J={cfg.J}, K={cfg.K}, gamma={cfg.gamma})")
        result = lisa_run(img, cfg)
        payload = result.to_json_dict()
        found = [layer.lattice for layer in result.layers]

        if truth is not None:
            reference = scene_lattices(load_scene(truth))
            matches = match_truth(found, reference, MetricConfig.from_settings())
            for entry, match in zip(payload["layers"], matches):
                entry["truth"] = match
            distances = [m["d_L"] for m in matches if m is not None]
            payload["max_d_L"] = max(distances) if distances else None

        if overlay is not None:
            shown = found
            if len(found) > len(PALETTE):
                console.print(
                    f"[yellow]Warning: overlay shows {len(PALETTE)} of {len(found)} layers"
                )
                shown = found[: len(PALETTE)]
            save_rgb(render_overlay(img, shown, cfg.sigma), overlay)

        if out is not None:
            write_json(out, payload)
    except (LatsepError, ValidationError) as e:
        fail(e)

    table = Table(show_header=True, header_style="bold cyan")
    table.add_column("Layer", style="dim")
    table.add_column("beta")
    table.add_column("rho")
    table.add_column("mu")
    table.add_column("E", justify="right", style="green")
    for i, layer in enumerate(result.layers, 1):
        d = layer.descriptors
        table.add_row(
            str(i),
            f"{d.beta.real:.4f}{d.beta.imag:+.4f}i",
            f"{d.rho.real:.4f}{d.rho.imag:+.4f}i",
            f"{layer.mu.real:.2f}{layer.mu.imag:+.2f}i",
            f"{layer.score.total:.4f}",
        )
    console.print(table)
    emit(payload)


@app.command(name="preset")
def preset_scene(
    name: str = typer.Argument(..., help="fig7, fig8, fig10-fig15, flake, flower, grain-boundary"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the scene JSON here"),
):
    """
    Scene description of a named experiment.
    """
    try:
        scene = preset(name)
        document = dump_scene(scene)
        if out is not None:
            try:
                out.write_bytes(document)
            except OSError as e:
                raise LatsepError(f"cannot write {out}: {e}")
            console.print(f"[green]Wrote preset {name} to {out}")
    except (LatsepError, ValidationError) as e:
        fail(e)
    typer.echo(document.decode())


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run the CLI and return its exit code.

    0 on success, 1 on usage errors, 2 on runtime errors.
    """
    try:
        result = app(args=argv, prog_name="latsep", standalone_mode=False)
    except typer.Abort:
        console.print("[red]Aborted")
        return 1
    except UsageFailure as e:
        e.show()
        return 1
    except (LatsepError, ValidationError) as e:
        console.print(f"[bold red]Error: {e}[/bold red]")
        return 2
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    raise SystemExit(main())
