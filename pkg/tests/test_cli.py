import json

import numpy as np
import pytest

from minball_mesh.cli import main
from minball_mesh.config import RunConfig, recon_defaults
from minball_mesh.io import load_mesh, save_mesh, save_pointcloud
from minball_mesh.shapes import circle_cloud, circle_mesh, sphere_mesh


def test_config_round_trip(tmp_path):
    cfg = RunConfig.from_flat({"mode": "3d-pc", "steps_position": 7, "rl_eps_card": 1e-3})
    cfg.dump(tmp_path / "c.json")
    back = RunConfig.from_flat(json.loads((tmp_path / "c.json").read_text()))
    assert back == cfg
    assert back.recon.dim == 3 and back.recon.steps_position == 7 and back.reinforce.eps_card == 1e-3


def test_config_rejects_unknown_keys_and_modes():
    with pytest.raises(ValueError, match="bogus"):
        RunConfig.from_flat({"bogus": 1})
    with pytest.raises(ValueError):
        recon_defaults("4d-pc")


def test_reconstruct_small_circle(tmp_path, capsys):
    save_pointcloud(circle_cloud(500), tmp_path / "c.xyz")
    (tmp_path / "cfg.json").write_text(json.dumps({"grid_cells": 16, "steps_position": 10, "steps_real_init": 30}))
    out = tmp_path / "out"
    rc = main(["reconstruct", "--input", str(tmp_path / "c.xyz"), "--config", str(tmp_path / "cfg.json"),
               "--out-dir", str(out), "--seed", "1"])
    assert rc == 0
    for name in ("config.json", "mesh.obj", "mesh.svg", "state.npz", "history.jsonl", "metrics.json"):
        assert (out / name).exists(), name
    assert list((out / "snapshots").glob("*.obj"))
    flat = json.loads((out / "config.json").read_text())
    assert flat["seed"] == 1 and flat["grid_cells"] == 16 and flat["mode"] == "2d-pc"
    report = json.loads((out / "metrics.json").read_text())
    assert report["nc"] is None and report["n_faces"] > 0
    assert load_mesh(out / "mesh.obj").dim == 2


def test_reconstruct_missing_input(tmp_path):
    assert main(["reconstruct", "--out-dir", str(tmp_path)]) == 2
    assert main(["reconstruct", "--input", str(tmp_path / "nope.xyz"), "--out-dir", str(tmp_path)]) == 1


def test_reconstruct_mode_dim_mismatch(tmp_path):
    save_pointcloud(circle_cloud(50), tmp_path / "c.xyz")
    assert main(["reconstruct", "--input", str(tmp_path / "c.xyz"), "--mode", "3d-pc",
                 "--out-dir", str(tmp_path / "o")]) == 2


def test_eval_identical_meshes(tmp_path, capsys):
    save_mesh(sphere_mesh(2), tmp_path / "a.obj")
    assert main(["eval", str(tmp_path / "a.obj"), str(tmp_path / "a.obj"), "--n-samples", "2000",
                 "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["cd"] == 0.0 and rep["f1"] == 1.0 and rep["si_ratio"] == 0.0
    assert json.loads((tmp_path / "r.json").read_text()) == rep


def test_eval_dimension_mismatch(tmp_path):
    save_mesh(sphere_mesh(1), tmp_path / "a.obj")
    save_mesh(circle_mesh(16), tmp_path / "b.obj")
    assert main(["eval", str(tmp_path / "a.obj"), str(tmp_path / "b.obj")]) == 2


def test_reinforce_rejects_3d_state(tmp_path, capsys):
    np.savez(tmp_path / "s.npz", positions=np.random.default_rng(0).random((10, 3)), psi=np.ones(10))
    save_pointcloud(np.zeros((4, 3)), tmp_path / "t.xyz")
    rc = main(["reinforce", "--state", str(tmp_path / "s.npz"), "--target", str(tmp_path / "t.xyz"),
               "--out-dir", str(tmp_path / "o")])
    assert rc == 2
    assert "unsupported mode" in capsys.readouterr().err


def test_reinforce_square(tmp_path, capsys):
    from minball_mesh.shapes import square_outline, square_with_midpoints
    pts = square_with_midpoints()
    np.savez(tmp_path / "s.npz", positions=pts.positions, psi=pts.psi)
    save_pointcloud(square_outline(400), tmp_path / "t.xyz")
    rc = main(["reinforce", "--state", str(tmp_path / "s.npz"), "--target", str(tmp_path / "t.xyz"),
               "--n0", "2", "--n1", "200", "--batch", "64", "--out-dir", str(tmp_path / "o")])
    assert rc == 0
    stats = json.loads((tmp_path / "o" / "stats.json").read_text())
    assert stats["points_before"] == 8 and stats["points_after"] == 4


def test_bench_small(tmp_path):
    rc = main(["bench", "--nmin", "1000", "--nmax", "2000", "--trials", "1", "--dims", "2",
               "--out", str(tmp_path / "b.csv")])
    assert rc == 0
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "N,dim,t_minball_ms,t_bruteforce_ms,speedup" and len(lines) == 3
