import json

import pytest

from conftest import PARAMS_FILE
from hyperfine.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main

FAST = ["--restarts", "1", "--steps", "10", "--t0", "0.05", "--t-min", "0.01", "--cooling", "0.7"]


def run(*args):
    return main([str(a) for a in args])


def test_predict_outputs_and_rerun_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("predict", "--params", PARAMS_FILE, "--out", a, "--path-points", 11) == EXIT_OK
    assert run("predict", "--params", PARAMS_FILE, "--out", b, "--path-points", 11) == EXIT_OK
    names = sorted(p.name for p in a.iterdir())
    assert "levels.csv" in names and len([n for n in names if n.endswith(".peaks")]) == 4
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    assert "params_sha256_16=" in (a / "levels.csv").read_text()


def test_zero_field_summary(tmp_path, capsys):
    assert run("predict", "--params", PARAMS_FILE, "--out", tmp_path, "--b0-gauss", 0,
               "--direction", "0,0,1") == EXIT_OK
    assert "zero-field levels" in capsys.readouterr().out


def test_missing_params_is_config_error(tmp_path):
    assert run("predict", "--params", tmp_path / "nope.params", "--out", tmp_path) == EXIT_CONFIG
    assert run("predict", "--out", tmp_path) == EXIT_CONFIG
    assert run("bogus") == EXIT_CONFIG


def test_bad_direction_rejected(tmp_path):
    assert run("predict", "--params", PARAMS_FILE, "--out", tmp_path, "--direction", "0,0,0") == EXIT_CONFIG


def test_unreadable_data_is_data_error(tmp_path):
    bad = tmp_path / "bad.peaks"
    bad.write_text("this is not a peak list\n")
    assert run("fit", "--data", bad, "--out", tmp_path / "fit", *FAST) == EXIT_DATA


@pytest.fixture
def peak_files(tmp_path):
    out = tmp_path / "pred"
    assert run("predict", "--params", PARAMS_FILE, "--out", out, "--path-points", 9) == EXIT_OK
    return sorted(out.glob("predicted_*.peaks"))


def test_duplicate_manifold_rejected(tmp_path, peak_files):
    assert run("fit", "--data", peak_files[0], peak_files[0], "--out", tmp_path / "f", *FAST) == EXIT_DATA


def test_conflicting_manifold_flag(tmp_path, peak_files):
    assert run("fit", "--data", peak_files[0], "--manifold", "x:1/2-3/2", "--out", tmp_path / "f",
               *FAST) in (EXIT_CONFIG, EXIT_DATA)


def test_small_fit_and_resume(tmp_path, peak_files):
    ground = [p for p in peak_files if "g_" in p.name]
    out = tmp_path / "fit"
    assert run("fit", "--data", *ground, "--out", out, *FAST) == EXIT_OK
    first = json.loads((out / "fit.json").read_text())
    assert first["schema"] == "hyperfine.fit/1"
    assert (out / "fit.params").exists()
    assert run("fit", "--data", *ground, "--out", out, *FAST, "--resume") == EXIT_OK
    again = json.loads((out / "fit.json").read_text())
    assert again["param_values"] == first["param_values"]


def test_holeburn_zefoz_frame(tmp_path):
    assert run("holeburn", "--params", PARAMS_FILE, "--out", tmp_path) == EXIT_OK
    assert (tmp_path / "holes.csv").read_text().count("anti-hole") > 0
    assert run("zefoz", "--params", PARAMS_FILE, "--out", tmp_path, "--grid", 2) == EXIT_OK
    assert (tmp_path / "zefoz.csv").exists()
    assert run("frame", "--params", PARAMS_FILE, "--out", tmp_path, "--direction", "1,0,0") == EXIT_OK
    assert run("frame", "--params", PARAMS_FILE, "--out", tmp_path) == EXIT_CONFIG
    assert run("holeburn", "--params", PARAMS_FILE, "--out", tmp_path, "--burn", "7/2,1/2") == EXIT_CONFIG
