"""``minball-mesh`` command line: reconstruct, bench, reinforce, eval."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, metrics
from .config import MODE_DEFAULTS, RunConfig
from .geometry import PointSet
from .io import load_mesh, load_pointcloud, save_mesh
from .reconstruction import reconstruct
from .reinforce import reinforce_optimize
from .tessellation import Mesh, extract_mesh

log = logging.getLogger("minball_mesh")


def _resolve(args, dim: int | None = None) -> RunConfig:
    flat = json.loads(Path(args.config).read_text()) if args.config else {}
    mode = args.mode or flat.get("mode") or (f"{dim}d-pc" if dim in (2, 3) else "2d-pc")
    if getattr(args, "input", None):
        flat["input"] = args.input
    if args.out_dir:
        flat["out_dir"] = args.out_dir
    if args.seed is not None:
        flat["seed"] = args.seed
    flat["mode"] = mode
    return RunConfig.from_flat(flat, mode)


def _write_json(path: Path, obj) -> None:
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v
    path.write_text(json.dumps({k: clean(v) for k, v in obj.items()}, indent=2) + "\n")


def cmd_reconstruct(args) -> int:
    if not args.input:
        print("reconstruct: --input is required", file=sys.stderr)
        return 2
    cloud = load_pointcloud(args.input)
    cfg = _resolve(args, cloud.shape[1])
    if cfg.recon.dim != cloud.shape[1]:
        print(f"reconstruct: mode {cfg.mode} expects {cfg.recon.dim}D input, got {cloud.shape[1]}D", file=sys.stderr)
        return 2
    out = Path(cfg.out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    print(json.dumps(cfg.to_flat(), sort_keys=True))

    def on_snapshot(name, mesh):
        save_mesh(mesh, out / "snapshots" / f"{name}.obj")

    result = reconstruct(cloud, cfg.recon, on_snapshot)
    save_mesh(result.mesh, out / "mesh.obj")
    np.savez(out / "state.npz", positions=result.points.positions, psi=result.points.psi)
    with open(out / "history.jsonl", "w") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec) + "\n")
    report = _cloud_report(result.mesh, cloud, result.runtime_seconds, args.seed or 0)
    _write_json(out / "metrics.json", report)
    print(json.dumps(report))
    return 0


def _cloud_report(mesh: Mesh, cloud: np.ndarray, runtime: float, seed: int) -> dict:
    """Metrics against a raw point cloud; normal and edge terms need a reference mesh and stay empty."""
    nan = float("nan")
    if len(mesh.faces):
        cd, f1 = metrics.chamfer_f1(mesh, cloud, seed=seed)
        ar, si, nme, nmv = metrics.mesh_quality(mesh)
    else:
        cd, f1, ar, si, nme, nmv = nan, 0.0, nan, 0.0, 0.0, 0.0
    rep = metrics.MetricsReport(cd, f1, nan, nan, nan, ar, si, nme, nmv, len(mesh.vertices), len(mesh.faces), runtime)
    return rep.__dict__


def cmd_bench(args) -> int:
    dims = [int(d) for d in args.dims.split(",")]

    def progress(row):
        print(f"N={row.N} dim={row.dim} minball={row.t_minball_ms:.2f}ms "
              f"bruteforce={'-' if row.t_bruteforce_ms is None else f'{row.t_bruteforce_ms:.2f}ms'}",
              file=sys.stderr)

    rows = bench.run(args.nmin, args.nmax, args.trials, dims, args.bruteforce_max, args.seed or 0, progress)
    text = bench.to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_reinforce(args) -> int:
    if not args.state or not args.target:
        print("reinforce: --state and --target are required", file=sys.stderr)
        return 2
    data = np.load(args.state)
    points = PointSet(data["positions"], data["psi"])
    if points.dim != 2:
        print("reinforce: unsupported mode (3D input); Reinforce-Ball is exposed for 2D only", file=sys.stderr)
        return 2
    target = load_pointcloud(args.target)
    if target.shape[1] != 2:
        print("reinforce: target cloud must be 2D", file=sys.stderr)
        return 2
    cfg = _resolve(args, 2)
    rl = cfg.reinforce
    for name in ("n0", "n1", "batch", "eps_card", "lr_phi"):
        value = getattr(args, name)
        if value is not None:
            setattr(rl, name, value)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    print(json.dumps(cfg.to_flat(), sort_keys=True))
    before = extract_mesh(points, knn_k=cfg.recon.knn_k)
    t0 = time.perf_counter()
    result = reinforce_optimize(points, target, rl, seed=cfg.seed, knn_k=cfg.recon.knn_k)
    after = extract_mesh(result.points, knn_k=cfg.recon.knn_k)
    save_mesh(after, out / "mesh.obj")
    np.savez(out / "state.npz", positions=result.points.positions, psi=result.points.psi)
    stats = {
        "cd_before": metrics.chamfer_f1(before, target, seed=cfg.seed)[0] if len(before.faces) else None,
        "cd_after": metrics.chamfer_f1(after, target, seed=cfg.seed)[0] if len(after.faces) else None,
        "points_before": len(points), "points_after": len(result.points),
        "verts_before": len(before.vertices), "verts_after": len(after.vertices),
        "edges_before": len(before.faces), "edges_after": len(after.faces),
        "runtime_seconds": time.perf_counter() - t0,
    }
    _write_json(out / "stats.json", stats)
    print(json.dumps(stats))
    return 0


def _load_shape(path: str):
    p = Path(path)
    if p.suffix.lower() == ".obj":
        return load_mesh(p)
    return load_pointcloud(p)


def cmd_eval(args) -> int:
    pred = load_mesh(args.pred)
    gt = _load_shape(args.gt)
    gt_dim = gt.dim if isinstance(gt, Mesh) else gt.shape[1]
    if pred.dim != gt_dim:
        print(f"eval: dimension mismatch (pred {pred.dim}D, gt {gt_dim}D)", file=sys.stderr)
        return 2
    seed = args.seed or 0
    if isinstance(gt, Mesh):
        report = metrics.evaluate(pred, gt, args.n_samples, args.tau, seed).__dict__
    else:
        report = _cloud_report(pred, gt, 0.0, seed)
    text = json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in report.items()},
                      indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minball-mesh", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON config; unknown keys are rejected")
        p.add_argument("--mode", choices=sorted(MODE_DEFAULTS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")

    p = sub.add_parser("reconstruct", help="point cloud -> mesh")
    common(p)
    p.add_argument("--input", help="XYZ or PLY point cloud")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("bench", help="time minimum-ball probabilities against brute force")
    common(p)
    p.add_argument("--nmin", type=int, default=1_000)
    p.add_argument("--nmax", type=int, default=200_000)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--dims", default="2,3")
    p.add_argument("--bruteforce-max", type=int, default=50_000)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("reinforce", help="prune redundant points of a 2D reconstruction")
    common(p)
    p.add_argument("--state", help="state.npz written by reconstruct")
    p.add_argument("--target", help="target point cloud")
    p.add_argument("--n0", type=int)
    p.add_argument("--n1", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--eps-card", dest="eps_card", type=float)
    p.add_argument("--lr-phi", dest="lr_phi", type=float)
    p.set_defaults(func=cmd_reinforce)

    p = sub.add_parser("eval", help="metrics report for a predicted mesh")
    p.add_argument("pred")
    p.add_argument("gt", help="reference mesh (.obj) or point cloud")
    p.add_argument("--n-samples", type=int, default=metrics.DEFAULT_SAMPLES)
    p.add_argument("--tau", type=float, default=metrics.DEFAULT_TAU)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"minball-mesh {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
