import json
import subprocess
import sys

import numpy as np
import pytest

from navforecast.cli import main
from navforecast.navmap import NavigationMap
from navforecast.netpbm import read_pgm, read_ppm
from navforecast.transfer import DescriptorIndex


@pytest.fixture
def scene_dir(tmp_path):
    spec = {"layout": "crossroads", "width": 96, "height": 96, "n_trajectories": 30, "seed": 1}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert main(["synth", "--spec", str(tmp_path / "spec.json"), "--out-dir", str(tmp_path / "scene")]) == 0
    return tmp_path / "scene"


def build(scene_dir, out):
    return main(
        [
            "build-map",
            "--trajectories", str(scene_dir / "trajectories.csv"),
            "--labels", str(scene_dir / "labels.pgm"),
            "--class", "pedestrian",
            "--patch-size", "8",
            "--out", str(out),
        ]
    )


def test_synth_outputs(scene_dir):
    names = sorted(p.name for p in scene_dir.iterdir())
    assert names == ["generator_map.json", "labels.pgm", "labels.txt", "spec.json", "trajectories.csv"]
    assert read_pgm(scene_dir / "labels.pgm").shape == (96, 96)


def test_pipeline(scene_dir, tmp_path, capsys):
    m = tmp_path / "map.json"
    assert build(scene_dir, m) == 0
    text = m.read_text()
    assert NavigationMap.load(m).to_json() == text

    args = [
        "predict", "--map", str(m), "--start", "1,40,1,0", "--goal", "95,40", "--samples", "5",
        "--seed", "3", "--out", str(tmp_path / "p.csv"), "--overlay", str(tmp_path / "o.ppm"),
        "--labels", str(scene_dir / "labels.pgm"),
    ]
    assert main(args) == 0
    first = (tmp_path / "p.csv").read_bytes()
    assert first.startswith(b"sample_id,step,x,y,omega,theta,score,termination\n")
    assert read_ppm(tmp_path / "o.ppm").shape == (96, 96, 3)
    assert main(args) == 0
    assert (tmp_path / "p.csv").read_bytes() == first

    assert main(["heatmap", "--map", str(m), "--field", "xi", "--out", str(tmp_path / "h.pgm")]) == 0
    assert read_pgm(tmp_path / "h.pgm").shape == (96, 96)

    (tmp_path / "scenes.txt").write_text(f"# id labels map\nA {scene_dir / 'labels.pgm'} map.json\n")
    assert main(["index", "--scenes", str(tmp_path / "scenes.txt"), "--k", "3", "--out", str(tmp_path / "i.json")]) == 0
    assert DescriptorIndex.load(tmp_path / "i.json").k == 3
    assert main(
        [
            "transfer", "--index", str(tmp_path / "i.json"), "--labels", str(scene_dir / "labels.pgm"),
            "--k", "1", "--out", str(tmp_path / "t.json"), "--report", str(tmp_path / "t.csv"),
        ]
    ) == 0
    t = NavigationMap.load(tmp_path / "t.json")
    orig = NavigationMap.load(m)
    assert np.array_equal(t.hod[orig.observed], orig.hod[orig.observed])

    assert main(
        [
            "eval", "--trajectories", str(scene_dir / "trajectories.csv"), "--labels", str(scene_dir / "labels.pgm"),
            "--patch-size", "8", "--folds", "3", "--samples", "5", "--out", str(tmp_path / "r.json"),
        ]
    ) == 0
    out = capsys.readouterr().out
    assert "navmap" in out and "linear" in out
    assert (tmp_path / "r.csv").exists()


def test_exit_codes(scene_dir, tmp_path):
    assert main(["build-map", "--labels", "x"]) == 1
    assert main(["predict", "--map", "m.json", "--start", "1,2", "--out", "p.csv"]) == 1
    assert build(scene_dir, tmp_path / "m.json") == 0
    missing = ["heatmap", "--map", str(tmp_path / "nope.json"), "--out", str(tmp_path / "h.pgm")]
    assert main(missing) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("id,x,y\n")
    args = ["build-map", "--trajectories", str(bad), "--labels", str(scene_dir / "labels.pgm"),
            "--class", "pedestrian", "--out", str(tmp_path / "m2.json")]
    assert main(args) == 3
    outside = ["predict", "--map", str(tmp_path / "m.json"), "--start=-5,2,1,0", "--out", str(tmp_path / "p.csv")]
    assert main(outside) == 3


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "navforecast", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "build-map" in r.stdout
    r = subprocess.run([sys.executable, "-m", "navforecast", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 1
