import io
import json
import os

import pytest

from shockev import __version__
from shockev.cli import main

STAGES = ("calibrate", "extract", "measure", "reconstruct", "invert", "report")


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def snapshot(root):
    files = {}
    for base, _, names in os.walk(root):
        for name in names:
            path = os.path.join(base, name)
            with open(path, "rb") as fh:
                files[os.path.relpath(path, root)] = fh.read()
    return files


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("cli") / "run1")
    code, out, err = run("simulate", "--out", path, "--seed", "1", "--no-clutter")
    assert code == 0, err
    assert out.count("events") == 3
    with open(os.path.join(path, "run.cfg"), "w") as fh:
        fh.write("[extract]\nangles = 0:90:5\n")
    for stage in STAGES:
        code, out, err = run(stage, "--run", path)
        assert code == 0, f"{stage}: {err}"
    return path


def test_simulate_layout(run_dir):
    names = set(os.listdir(run_dir))
    for want in ("scene.cfg", "markers.txt", "blast.cfg", "labels.csv", "ground_truth.json",
                 "cam0.evs", "cam1.evs", "cam2.evs", "truth", "cameras"):
        assert want in names


def test_stage_outputs(run_dir):
    for name in ("calibration.csv", "fronts.csv", "trace.json", "radii.csv", "models.json",
                 "cloud.csv", "invert.json"):
        assert os.path.getsize(os.path.join(run_dir, name)) > 0
    with open(os.path.join(run_dir, "fronts.csv")) as fh:
        assert fh.readline().strip() == "view,alpha_deg,t_us,d_px"
    with open(os.path.join(run_dir, "invert.json")) as fh:
        est = json.load(fh)["estimates"]
    assert [e["distance_m"] for e in est] == [4.0, 6.0, 8.0]
    eight = est[-1]
    assert eight["W_g"] == pytest.approx(600.0, rel=0.05)
    lo, hi = eight["W_g_bounds"]
    assert lo <= eight["W_g"] <= hi


def test_report_contents(run_dir):
    rep = os.path.join(run_dir, "report")
    for name in ("report.json", "radius_series.csv", "velocity_series.csv",
                 "velocity_by_distance.csv", "radius_vs_time.svg", "velocity_vs_time.svg",
                 "velocity_by_distance.svg"):
        assert os.path.getsize(os.path.join(rep, name)) > 0
    with open(os.path.join(rep, "report.json")) as fh:
        data = json.load(fh)
    assert data["version"] == __version__
    assert data["parameters"]["extract.angles"] == "0:90:5"
    assert data["reference_mass_kg"] == pytest.approx(0.6)


def test_rerun_is_byte_identical(run_dir):
    before = snapshot(run_dir)
    for stage in ("measure", "reconstruct", "invert", "report"):
        assert run(stage, "--run", run_dir)[0] == 0
    assert snapshot(run_dir) == before


def test_simulate_is_reproducible(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    cfg = tmp_path / "scene.cfg"
    cfg.write_text("[charge]\nduration = 2000\n")
    for path in (a, b):
        assert run("simulate", "--out", path, "--config", str(cfg), "--seed", "3")[0] == 0
    assert snapshot(a) == snapshot(b)


def test_uncalibrated_cluttered_chain(tmp_path):
    """simulate, extract, measure, invert on the default scene, no calibrate."""
    path = str(tmp_path / "run")
    assert run("simulate", "--out", path, "--seed", "2")[0] == 0
    with open(os.path.join(path, "run.cfg"), "w") as fh:
        fh.write("[extract]\nangles = 0:60:5\n")
    for stage in ("extract", "measure"):
        code, _, err = run(stage, "--run", path)
        assert code == 0, err
    code, out, _ = run("invert", "--run", path, "--distance", "8")
    assert code == 0
    assert float(out.split()[0]) == pytest.approx(600.0, rel=0.05)
    with open(os.path.join(path, "trace.json")) as fh:
        assert json.load(fh)["cameras"] == "truth"


def test_invert_standalone():
    code, out, _ = run("invert", "--radius", "4", "--velocity", "402.03")
    assert code == 0
    grams = float(out.split()[0])
    assert grams == pytest.approx(657.46, rel=5e-3)


def test_invert_subsonic_is_numeric_error():
    code, _, err = run("invert", "--radius", "4", "--velocity", "300")
    assert code == 3
    assert err.startswith("error: E_") and "300" in err


def test_invert_needs_both_values():
    code, _, err = run("invert", "--radius", "4")
    assert code == 2 and "E_USAGE" in err


def test_unknown_flag_writes_nothing(tmp_path):
    path = str(tmp_path / "run")
    code, _, err = run("simulate", "--out", path, "--bogus")
    assert code == 2 and err.startswith("error: E_USAGE")
    assert not os.path.exists(path)


def test_missing_run_directory(tmp_path):
    code, _, err = run("extract", "--run", str(tmp_path / "nope"))
    assert code == 2 and "not found" in err


def test_stage_out_of_order_leaves_no_output(tmp_path):
    path = str(tmp_path / "run")
    assert run("simulate", "--out", path, "--config", str(_short_scene(tmp_path)))[0] == 0
    before = snapshot(path)
    code, _, err = run("measure", "--run", path)
    assert code == 2 and err.startswith("error: ")
    assert snapshot(path) == before


def test_bad_run_config(tmp_path):
    path = str(tmp_path / "run")
    os.makedirs(path)
    with open(os.path.join(path, "run.cfg"), "w") as fh:
        fh.write("[extract]\nrhoo = 1\n")
    code, _, err = run("extract", "--run", path)
    assert code == 2 and "E_CONFIG" in err and "rhoo" in err


def test_version_and_dump_config():
    code, out, _ = run("--version")
    assert code == 0
    code, out, _ = run("--dump-config")
    assert code == 0 and "[extract]" in out and "c0 = 340.0" in out
    code, out, _ = run("measure", "--run", ".", "--degree", "4", "--dump-config")
    assert code == 0 and "degree = 4" in out


def test_no_subcommand():
    code, _, err = run()
    assert code == 2 and "E_USAGE" in err


def _short_scene(tmp_path):
    cfg = tmp_path / "scene.cfg"
    cfg.write_text("[charge]\nduration = 1000\n")
    return cfg
