"""Prune the redundant collinear midpoints of a square outline with the score-function estimator."""

import argparse
import json

from minball_mesh.config import ReinforceConfig
from minball_mesh.metrics import chamfer_f1
from minball_mesh.reinforce import reinforce_optimize
from minball_mesh.shapes import square_outline, square_with_midpoints
from minball_mesh.tessellation import extract_mesh


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps-card", type=float, default=1e-5)
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--lr-phi", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    pts = square_with_midpoints()
    target = square_outline(400)
    cfg = ReinforceConfig(n0=args.epochs, n1=args.steps, batch=args.batch, eps_card=args.eps_card,
                          lr_phi=args.lr_phi)
    before = extract_mesh(pts)
    res = reinforce_optimize(pts, target, cfg, seed=args.seed)
    after = extract_mesh(res.points)
    print(json.dumps({
        "kept_points": res.kept.tolist(),
        "phi": [round(float(p), 4) for p in res.phi],
        "edges_before": len(before.faces), "edges_after": len(after.faces),
        "cd_before": chamfer_f1(before, target)[0], "cd_after": chamfer_f1(after, target)[0],
    }, indent=2))


if __name__ == "__main__":
    main()
