from __future__ import annotations

import json

import numpy as np
import pytest

from gravgrasp.cli import CACHE_ENV, main
from gravgrasp.geometry import Pose, box_mesh, cylinder_mesh
from gravgrasp.geometry.mesh import save_obj
from gravgrasp.sampling import GraspCandidate

TOP = np.diag([1.0, -1.0, -1.0])


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def block_obj(tmp_path):
    path = tmp_path / "block.obj"
    save_obj(box_mesh([0.05, 0.05, 0.12]), path)
    return path


def _cands(path, cands):
    path.write_text(json.dumps({"candidates": [c.to_dict() for c in cands]}))
    return path


# ------------------------------------------------------------------- sample


def test_sample_is_deterministic(tmp_path):
    mesh = tmp_path / "cyl.obj"
    save_obj(cylinder_mesh(0.0325, 0.2), mesh)
    outs = []
    for i in range(2):
        out = tmp_path / f"c{i}.json"
        assert run("sample", mesh, "--out", out, "--seed", 42, "--count", 10, "--jobs", 1) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    data = json.loads(outs[0])
    assert data["candidates"] and data["sampler"]["rng_seed"] == 42
    manifest = json.loads((tmp_path / "c0.json.manifest.json").read_text())
    assert manifest["config_hash"] == data["config_hash"]


def test_sample_count_zero_gives_empty_list(tmp_path, block_obj):
    out = tmp_path / "c.json"
    assert run("sample", block_obj, "--out", out, "--count", 0, "--jobs", 1) == 0
    assert json.loads(out.read_text())["candidates"] == []


def test_sample_missing_mesh(tmp_path, capsys):
    assert run("sample", tmp_path / "nope.obj", "--out", tmp_path / "c.json") == 2
    assert "nope.obj" in capsys.readouterr().err
    assert not (tmp_path / "c.json").exists()


# ------------------------------------------------------------- refine-score


def test_refine_score_reproduces_pinch_limit(tmp_path, block_obj):
    cands = _cands(tmp_path / "c.json", [GraspCandidate("p", Pose(TOP, [0, 0, 0.05]), 0.05, "AntipodalSeed", 0)])
    out = tmp_path / "s.json"
    assert run("refine-score", cands, "--mesh", block_obj, "--out", out, "--jobs", 1) == 0
    [g] = json.loads(out.read_text())["grasps"]
    assert g["score"][4] == pytest.approx(60.0, rel=0.05)
    assert g["score"][5] == pytest.approx(60.0, rel=0.05)


def test_refine_score_empty_and_progress(tmp_path, block_obj, capsys):
    out = tmp_path / "s.json"
    assert run("refine-score", _cands(tmp_path / "e.json", []), "--mesh", block_obj, "--out", out) == 0
    assert json.loads(out.read_text())["grasps"] == []
    far = [GraspCandidate(f"f{i}", Pose(np.eye(3), [0.5, 0.001 * i, 0]), 0.05, "AntipodalSeed", 0) for i in range(250)]
    capsys.readouterr()
    assert run("refine-score", _cands(tmp_path / "f.json", far), "--mesh", block_obj, "--out", out, "--jobs", 1) == 0
    lines = [ln for ln in capsys.readouterr().err.splitlines() if ln.startswith("refined")]
    assert lines == ["refined 100/250 grasps", "refined 200/250 grasps"]
    data = json.loads(out.read_text())
    assert data["attempted"] == 250 and data["failures"] == {"NoContact": 250}


def test_refine_score_cache(tmp_path, block_obj, monkeypatch):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "cache"))
    cands = _cands(tmp_path / "c.json", [GraspCandidate("p", Pose(TOP, [0, 0, 0.05]), 0.05, "AntipodalSeed", 0)])
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("refine-score", cands, "--mesh", block_obj, "--out", a, "--jobs", 1) == 0
    assert len(list((tmp_path / "cache" / "refine").iterdir())) == 1
    assert run("refine-score", cands, "--mesh", block_obj, "--out", b, "--jobs", 1) == 0
    assert a.read_bytes() == b.read_bytes()


def test_refine_score_malformed_candidates(tmp_path, block_obj):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nothing": 1}')
    assert run("refine-score", bad, "--mesh", block_obj, "--out", tmp_path / "s.json") == 2


# ---------------------------------------------------------- compose-annotate


@pytest.fixture(scope="module")
def one_object_scenes(library_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert run("compose-annotate", library_dir, "--out", out, "--count", 2, "--objects", 1, "--seed", 3,
               "--jobs", 1) == 0
    return out


def test_compose_writes_scene_directories(one_object_scenes):
    dirs = sorted(p for p in one_object_scenes.iterdir() if p.is_dir())
    assert [d.name for d in dirs] == ["scene_0000", "scene_0001"]
    for d in dirs:
        meta = json.loads((d / "meta.json").read_text())
        assert len(meta["scene"]["objects"]) == 1
        assert {p.name for p in d.iterdir()} == {"tsdf.bin", "labels.bin", "meta.json"}
    manifest = json.loads((one_object_scenes / "run_manifest.json").read_text())
    assert len(manifest["outputs"]) == 6


def test_compose_missing_score_file(tmp_path, capsys):
    save_obj(box_mesh([0.05, 0.05, 0.05]), tmp_path / "cube.obj")
    assert run("compose-annotate", tmp_path, "--out", tmp_path / "o", "--count", 1) == 2
    assert "cube" in capsys.readouterr().err


def test_compose_rejects_object_count(library_dir, tmp_path):
    assert run("compose-annotate", library_dir, "--out", tmp_path / "o", "--objects", 9) == 1


# --------------------------------------------------------------------- eval


def test_eval_scripted_success(one_object_scenes, library_dir, tmp_path):
    out = tmp_path / "r.csv"
    assert run("eval", one_object_scenes, "--library", library_dir, "--detector", "scripted-success",
               "--weights", "0.1:1.5:0.2", "--out", out, "--jobs", 1) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "weight_kg,trials,successes,objects,SR,CR"
    assert len(lines) == 9
    for ln in lines[1:]:
        assert ln.endswith(",100.0000,100.0000")


def test_eval_unknown_detector(one_object_scenes, library_dir, tmp_path, capsys):
    code = run("eval", one_object_scenes, "--library", library_dir, "--detector", "psychic", "--out", tmp_path / "r.csv")
    assert code == 1
    err = capsys.readouterr().err
    assert "oracle" in err and "scripted-success" in err


@pytest.mark.parametrize("weights", ["", "0.5:0.1:0.1", "x"])
def test_eval_bad_weights(one_object_scenes, library_dir, tmp_path, weights):
    assert run("eval", one_object_scenes, "--library", library_dir, "--detector", "oracle", "--weights", weights,
               "--out", tmp_path / "r.csv") == 1


def test_eval_missing_scenes(library_dir, tmp_path):
    assert run("eval", tmp_path / "none", "--library", library_dir, "--detector", "oracle",
               "--out", tmp_path / "r.csv") == 2


# --------------------------------------------------------------------- plot


def test_plot_csv_and_volume(one_object_scenes, tmp_path):
    csv_path = tmp_path / "r.csv"
    csv_path.write_text("weight_kg,trials,successes,objects,SR,CR\n0.100,4,3,4,75.0000,75.0000\n"
                        "0.300,4,2,4,50.0000,50.0000\n")
    assert run("plot", csv_path, "--out", tmp_path / "m.svg") == 0
    assert b"<svg" in (tmp_path / "m.svg").read_bytes()
    scene = one_object_scenes / "scene_0000"
    assert run("plot", scene, "--plane", "z=0.08", "--out", tmp_path / "s.svg") == 0
    assert run("plot", scene / "labels.bin", "--plane", "x=0.0", "--out", tmp_path / "l.svg") == 0


@pytest.mark.parametrize("plane", ["q=1", "z=5.0", None])
def test_plot_bad_plane(one_object_scenes, tmp_path, plane):
    args = ["plot", one_object_scenes / "scene_0000", "--out", tmp_path / "s.svg"]
    if plane is not None:
        args += ["--plane", plane]
    assert run(*args) == 1


def test_plot_rejects_non_label_volume(one_object_scenes, tmp_path):
    assert run("plot", one_object_scenes / "scene_0000" / "tsdf.bin", "--plane", "z=0.0",
               "--out", tmp_path / "s.svg") == 2


# ------------------------------------------------------------------ general


def test_usage_errors(tmp_path, block_obj):
    assert run() == 1
    assert run("frobnicate") == 1
    assert run("sample", block_obj, "--out", tmp_path / "c.json", "--jobs", 0) == 1
    assert run("--version") == 0


def test_bad_config_is_data_error(tmp_path, block_obj):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"sampler": {"unknown_key": 1}}')
    assert run("sample", block_obj, "--out", tmp_path / "c.json", "--config", cfg) == 2
