"""Tests for the latsep command line."""

import orjson
import pytest
import typer
from typer.testing import CliRunner

from src.cli.commands import UsageFailure, app, main, match_truth
from src.core.models import MetricConfig
from src.imaging.scene import preset, scene_lattices

from .conftest import lattice

BASIS_A = "11.8177,2.0838;-2.1706,12.3101"
BASIS_B = "2.0838,-11.8177;12.3101,2.1706"


def _json(capsys) -> dict:
    return orjson.loads(capsys.readouterr().out)


def test_help():
    result = CliRunner().invoke(app, ["--help"])
    assert result.exit_code == 0
    for command in ("generate", "metric", "equiv", "matrix", "spectrum", "separate", "preset"):
        assert command in result.output


def test_metric(capsys):
    assert main(["metric", f"--a={BASIS_A}", f"--b={BASIS_B}"]) == 0
    document = _json(capsys)
    assert document["schema"] == "latsep/1"
    assert document["d_L"] == pytest.approx(0.0816, abs=1e-2)
    assert document["path"] == "D2"
    assert document["fourtuple_difference_percent"][2] == pytest.approx(900, abs=0.5)


def test_metric_degenerate_basis():
    assert main(["metric", "--a=0,0;1,0", f"--b={BASIS_B}"]) == 2


def test_metric_malformed_basis():
    assert main(["metric", "--a=1,0", f"--b={BASIS_B}"]) == 1


@pytest.mark.parametrize(
    "b,expected",
    [("1,0;1,1", True), ("0,1;-1,0", True), ("2,0;0,1", False)],
)
def test_equiv(capsys, b, expected):
    assert main(["equiv", "--a=1,0;0,1", f"--b={b}"]) == 0
    document = _json(capsys)
    assert document["equivalent"] is expected
    assert document["wallpaper_a"] == "square"


def test_matrix(tmp_path, capsys):
    entries = [
        {"beta": [11, 0], "rho": [0.5, 0.8660254037844386]},
        {"beta": [11, 0], "rho": [0, 1]},
        {"b1": [13, 0], "b2": [0, 13]},
    ]
    path = tmp_path / "lattices.json"
    path.write_bytes(orjson.dumps(entries))
    assert main(["matrix", "--lattices", str(path)]) == 0
    values = _json(capsys)["matrix"]
    assert values[0][1] == pytest.approx(0.5493, abs=1e-2)
    assert values[1][2] == pytest.approx(0.4472, abs=1e-2)


def test_matrix_bad_file(tmp_path):
    path = tmp_path / "lattices.json"
    path.write_text('{"beta": 1}')
    assert main(["matrix", "--lattices", str(path)]) == 2


def test_preset_and_generate(tmp_path, capsys):
    spec_path = tmp_path / "scene.json"
    image_path = tmp_path / "scene.pgm"
    assert main(["preset", "fig10", "--out", str(spec_path)]) == 0
    assert orjson.loads(spec_path.read_bytes())["schema"] == "latsep/1"
    capsys.readouterr()

    assert main(["generate", "--spec", str(spec_path), "--out", str(image_path)]) == 0
    document = _json(capsys)
    assert document["width"] == 119
    assert len(document["layers"]) == 2
    assert image_path.read_bytes().startswith(b"P5")


def test_spectrum(tmp_path, capsys):
    spec_path = tmp_path / "scene.json"
    image_path = tmp_path / "scene.pgm"
    main(["preset", "fig11", "--out", str(spec_path)])
    main(["generate", "--spec", str(spec_path), "--out", str(image_path)])
    capsys.readouterr()

    peaks_path = tmp_path / "peaks.json"
    out_path = tmp_path / "spectrum.png"
    code = main(
        ["spectrum", "--in", str(image_path), "--out", str(out_path), "--peaks", str(peaks_path)]
    )
    assert code == 0
    document = _json(capsys)
    assert 0 < len(document["peaks"]) <= 6
    assert {"radius", "angle", "magnitude", "period"} <= set(document["peaks"][0])
    assert out_path.exists()
    assert orjson.loads(peaks_path.read_bytes())["peaks"] == document["peaks"]


def test_missing_option():
    assert main(["generate", "--out", "unused.pgm"]) == 1


def test_usage_errors_come_from_the_bundled_parser():
    assert issubclass(typer.BadParameter, UsageFailure)
    assert issubclass(typer.BadParameter, Exception)
    assert main(["metric", "--bogus"]) == 1
    assert main(["no-such-command"]) == 1


def test_component_count_below_two(tmp_path):
    assert main(["separate", "--in", str(tmp_path / "x.pgm"), "--J", "1"]) == 1


def test_missing_input(tmp_path):
    assert main(["separate", "--in", str(tmp_path / "absent.pgm")]) == 2


def test_unknown_preset():
    assert main(["preset", "fig99"]) == 2


def test_match_truth():
    truth = scene_lattices(preset("fig7"))
    found = [truth[1], lattice(30, 1j)]
    matches = match_truth(found, truth, MetricConfig())
    assert matches[0]["truth_index"] == 1
    assert matches[0]["d_L"] == pytest.approx(0.0, abs=1e-6)
    assert matches[1]["truth_index"] in (0, 2)


@pytest.mark.slow
def test_separate(tmp_path, capsys):
    spec_path = tmp_path / "scene.json"
    image_path = tmp_path / "scene.pgm"
    overlay_path = tmp_path / "overlay.ppm"
    result_path = tmp_path / "result.json"
    main(["preset", "fig10", "--out", str(spec_path)])
    main(["generate", "--spec", str(spec_path), "--out", str(image_path)])
    capsys.readouterr()

    code = main(
        [
            "separate",
            "--in",
            str(image_path),
            "--truth",
            str(spec_path),
            "--overlay",
            str(overlay_path),
            "--out",
            str(result_path),
        ]
    )
    assert code == 0
    document = _json(capsys)
    assert len(document["layers"]) == 2
    assert document["max_d_L"] <= 0.01
    assert overlay_path.read_bytes().startswith(b"P6")
    assert orjson.loads(result_path.read_bytes())["layers"] == document["layers"]
