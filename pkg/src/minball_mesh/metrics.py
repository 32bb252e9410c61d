"""Geometric accuracy and mesh quality metrics for 2D polylines and 3D triangle meshes."""

from __future__ import annotations

import dataclasses
import json
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .losses import AR_CAP
from .tessellation import Mesh

DEFAULT_TAU = 0.005
DEFAULT_SAMPLES = 10_000
ANGLE_THRESH_DEG = 30.0


@dataclass
class MetricsReport:
    cd: float
    f1: float
    nc: float
    ecd: float
    ef1: float
    ar_mean: float
    si_ratio: float
    nme_ratio: float
    nmv_ratio: float
    n_verts: int
    n_faces: int
    runtime_seconds: float = 0.0

    def to_json(self) -> str:
        # NaN (e.g. AR of a 2D mesh) is written as null to keep the file valid JSON
        flat = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in dataclasses.asdict(self).items()}
        return json.dumps(flat, indent=2)


# -- sampling --------------------------------------------------------------


def _face_measure(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.faces]
    if mesh.dim == 2:
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def face_normals(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.faces]
    if mesh.dim == 2:
        e = p[:, 1] - p[:, 0]
        n = np.stack([-e[:, 1], e[:, 0]], axis=1)
    else:
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


def sample_surface(mesh: Mesh, n: int, seed: int = 0):
    """Uniform samples by length (2D) or area (3D); returns ``(points, normals)``."""
    if len(mesh.faces) == 0:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    measure = _face_measure(mesh)
    total = measure.sum()
    prob = measure / total if total > 0 else np.full(len(measure), 1.0 / len(measure))
    fid = rng.choice(len(mesh.faces), size=n, p=prob)
    p = mesh.vertices[mesh.faces[fid]]
    if mesh.dim == 2:
        u = rng.random((n, 1))
        pts = p[:, 0] + u * (p[:, 1] - p[:, 0])
    else:
        u = rng.random((n, 2))
        flip = u.sum(1) > 1
        u[flip] = 1 - u[flip]
        pts = p[:, 0] + u[:, :1] * (p[:, 1] - p[:, 0]) + u[:, 1:] * (p[:, 2] - p[:, 0])
    return pts, face_normals(mesh)[fid]


def _as_samples(shape, n: int, seed: int):
    if isinstance(shape, Mesh):
        return sample_surface(shape, n, seed)[0]
    return np.asarray(shape, dtype=np.float64)


def _cd_f1(a: np.ndarray, b: np.ndarray, tau: float):
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    cd = 0.5 * (np.mean(da ** 2) + np.mean(db ** 2))
    precision = np.mean(da < tau)
    recall = np.mean(db < tau)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return float(cd), float(f1)


def chamfer_f1(pred, gt, n_samples: int = DEFAULT_SAMPLES, tau: float = DEFAULT_TAU, seed: int = 0):
    """Squared two-sided Chamfer distance (mean of both directions) and F1 at ``tau``.

    Either argument may be a Mesh (sampled with ``seed``) or a raw point array.
    Both meshes are sampled from the same seed, so swapping them gives the
    same value.
    """
    a = _as_samples(pred, n_samples, seed)
    b = _as_samples(gt, n_samples, seed)
    if a.shape[1] != b.shape[1]:
        raise ValueError("pred and gt dimensions differ")
    return _cd_f1(a, b, tau)


def normal_consistency(pred: Mesh, gt: Mesh, n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Mean absolute cosine between normals of mutually nearest samples, both directions."""
    pa, na = sample_surface(pred, n_samples, seed)
    pb, nb = sample_surface(gt, n_samples, seed)
    _, ia = cKDTree(pb).query(pa)
    _, ib = cKDTree(pa).query(pb)
    ca = np.abs((na * nb[ia]).sum(1))
    cb = np.abs((nb * na[ib]).sum(1))
    return float(0.5 * (ca.mean() + cb.mean()))


# -- sharp features --------------------------------------------------------


def _edge_faces(faces: np.ndarray):
    table = defaultdict(list)
    for fi, f in enumerate(faces):
        a, b, c = sorted(int(x) for x in f)
        table[a, b].append(fi)
        table[b, c].append(fi)
        table[a, c].append(fi)
    return table


def sharp_features(mesh: Mesh, angle_thresh_deg: float = ANGLE_THRESH_DEG) -> np.ndarray:
    """3D: ``(E, 2)`` vertex pairs of sharp edges. 2D: ``(V,)`` ids of sharp vertices.

    An edge is sharp if its faces bend by more than the threshold, or if it is
    a boundary or non-manifold edge. A 2D vertex is sharp if the polyline turns
    by more than the threshold there, or if its degree is not 2.
    """
    cos_t = math.cos(math.radians(angle_thresh_deg))
    if mesh.dim == 2:
        adj = defaultdict(list)
        for a, b in mesh.faces:
            adj[int(a)].append(int(b))
            adj[int(b)].append(int(a))
        out = []
        for v, nb in adj.items():
            if len(nb) != 2:
                out.append(v)
                continue
            u = mesh.vertices[v] - mesh.vertices[nb[0]]
            w = mesh.vertices[nb[1]] - mesh.vertices[v]
            nu, nw = np.linalg.norm(u), np.linalg.norm(w)
            if nu == 0 or nw == 0 or np.dot(u, w) / (nu * nw) < cos_t:
                out.append(v)
        return np.array(sorted(out), dtype=np.int64)
    normals = face_normals(mesh)
    out = []
    for edge, fs in _edge_faces(mesh.faces).items():
        if len(fs) != 2 or abs(np.dot(normals[fs[0]], normals[fs[1]])) < cos_t:
            out.append(edge)
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def _feature_samples(mesh: Mesh, angle_thresh_deg: float, n: int, seed: int) -> np.ndarray:
    feats = sharp_features(mesh, angle_thresh_deg)
    if len(feats) == 0:
        return np.empty((0, mesh.dim))
    if mesh.dim == 2:
        return mesh.vertices[feats]
    rng = np.random.default_rng(seed)
    p = mesh.vertices[feats]
    length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    prob = length / length.sum() if length.sum() > 0 else None
    eid = rng.choice(len(feats), size=n, p=prob)
    u = rng.random((n, 1))
    return p[eid, 0] + u * (p[eid, 1] - p[eid, 0])


def edge_metrics(pred: Mesh, gt: Mesh, angle_thresh_deg: float = ANGLE_THRESH_DEG, tau: float = DEFAULT_TAU,
                 n_samples: int = DEFAULT_SAMPLES, seed: int = 0):
    """Chamfer distance and F1 restricted to samples on sharp features.

    Both feature sets empty gives ``(0, 1)``. Exactly one empty gives the
    worst case: the squared diagonal of the joint bounding box and F1 = 0.
    """
    a = _feature_samples(pred, angle_thresh_deg, n_samples, seed)
    b = _feature_samples(gt, angle_thresh_deg, n_samples, seed)
    if len(a) == 0 and len(b) == 0:
        return 0.0, 1.0
    if len(a) == 0 or len(b) == 0:
        allv = np.concatenate([pred.vertices, gt.vertices])
        return float(np.sum(np.ptp(allv, axis=0) ** 2)), 0.0
    return _cd_f1(a, b, tau)


# -- quality ---------------------------------------------------------------


def aspect_ratios(mesh: Mesh) -> np.ndarray:
    """Circumradius over twice the inradius per triangle (1 for equilateral), capped."""
    p = mesh.vertices[mesh.faces]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    cross2 = np.sum(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ar = a * b * c * (a + b + c) / (4.0 * cross2)
    return np.where(np.isfinite(ar), np.minimum(ar, AR_CAP), AR_CAP)


def _orient2d(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _on_segment(a, b, p):
    return (np.minimum(a[..., 0], b[..., 0]) <= p[..., 0]) & (p[..., 0] <= np.maximum(a[..., 0], b[..., 0])) & \
           (np.minimum(a[..., 1], b[..., 1]) <= p[..., 1]) & (p[..., 1] <= np.maximum(a[..., 1], b[..., 1]))


def segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Closed 2D segment intersection (touching and collinear overlap count), vectorised."""
    d1 = _orient2d(q1, q2, p1)
    d2 = _orient2d(q1, q2, p2)
    d3 = _orient2d(p1, p2, q1)
    d4 = _orient2d(p1, p2, q2)
    proper = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)
    touch = ((d1 == 0) & _on_segment(q1, q2, p1)) | ((d2 == 0) & _on_segment(q1, q2, p2)) | \
            ((d3 == 0) & _on_segment(p1, p2, q1)) | ((d4 == 0) & _on_segment(p1, p2, q2))
    return proper | touch


def _segment_hits_triangle(s0, s1, t0, t1, t2, eps=1e-12):
    """Whether the closed segment s0-s1 meets the closed triangle (non-coplanar case)."""
    e1 = t1 - t0
    e2 = t2 - t0
    d = s1 - s0
    h = np.cross(d, e2)
    det = (e1 * h).sum(-1)
    ok = np.abs(det) > eps * (np.linalg.norm(d, axis=-1) * np.linalg.norm(e1, axis=-1) * np.linalg.norm(e2, axis=-1) + 1e-300)
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = s0 - t0
    u = (s * h).sum(-1) * inv
    q = np.cross(s, e1)
    v = (d * q).sum(-1) * inv
    t = (e2 * q).sum(-1) * inv
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)


def _coplanar_overlap(a, b, n):
    """Triangle overlap for coplanar pairs, by projection onto the dominant plane."""
    axis = np.argmax(np.abs(n), axis=-1)
    keep = np.array([[1, 2], [0, 2], [0, 1]])[axis]
    pa = np.take_along_axis(a, keep[:, None, :].repeat(3, 1), 2)
    pb = np.take_along_axis(b, keep[:, None, :].repeat(3, 1), 2)
    hit = np.zeros(len(a), dtype=bool)
    for i in range(3):
        for j in range(3):
            hit |= segments_intersect(pa[:, i], pa[:, (i + 1) % 3], pb[:, j], pb[:, (j + 1) % 3])
    for tri, pts in ((pa, pb), (pb, pa)):
        o0 = _orient2d(tri[:, 0], tri[:, 1], pts[:, 0])
        o1 = _orient2d(tri[:, 1], tri[:, 2], pts[:, 0])
        o2 = _orient2d(tri[:, 2], tri[:, 0], pts[:, 0])
        hit |= ((o0 >= 0) & (o1 >= 0) & (o2 >= 0)) | ((o0 <= 0) & (o1 <= 0) & (o2 <= 0))
    return hit


def triangles_intersect(a: np.ndarray, b: np.ndarray, coplanar_tol: float = 1e-12) -> np.ndarray:
    """Exact-predicate style test for batches of triangle pairs ``(M, 3, 3)``.

    Non-coplanar triangles meet iff an edge of one crosses the other: each
    endpoint of their intersection segment lies on an edge of one of them.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.cross(a[:, 1] - a[:, 0], a[:, 2] - a[:, 0])
    scale = np.linalg.norm(na, axis=1) * np.abs(b - a[:, :1]).max(axis=(1, 2)) + 1e-300
    dist_b = np.einsum("mj,mkj->mk", na, b - a[:, :1])
    coplanar = np.all(np.abs(dist_b) <= coplanar_tol * scale[:, None], axis=1)
    hit = np.zeros(len(a), dtype=bool)
    for i in range(3):
        hit |= _segment_hits_triangle(a[:, i], a[:, (i + 1) % 3], b[:, 0], b[:, 1], b[:, 2])
        hit |= _segment_hits_triangle(b[:, i], b[:, (i + 1) % 3], a[:, 0], a[:, 1], a[:, 2])
    if coplanar.any():
        hit[coplanar] = _coplanar_overlap(a[coplanar], b[coplanar], na[coplanar])
    return hit


def _candidate_pairs(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.faces]
    centroid = p.mean(1)
    reach = np.linalg.norm(p - centroid[:, None], axis=2).max(1)
    tree = cKDTree(centroid)
    rmax = reach.max()
    pairs = []
    for i, nbrs in enumerate(tree.query_ball_point(centroid, reach + rmax)):
        nbrs = np.asarray(nbrs, dtype=np.int64)
        nbrs = nbrs[nbrs > i]
        if len(nbrs):
            close = np.linalg.norm(centroid[nbrs] - centroid[i], axis=1) <= reach[nbrs] + reach[i]
            nbrs = nbrs[close]
            pairs.append(np.stack([np.full(len(nbrs), i), nbrs], 1))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.concatenate(pairs)
    shared = (mesh.faces[pairs[:, 0], :, None] == mesh.faces[pairs[:, 1], None, :]).any(axis=(1, 2))
    return pairs[~shared]


def self_intersection_ratio(mesh: Mesh) -> float:
    """Fraction of faces meeting some face they share no vertex with."""
    if len(mesh.faces) < 2:
        return 0.0
    pairs = _candidate_pairs(mesh)
    if len(pairs) == 0:
        return 0.0
    p = mesh.vertices[mesh.faces]
    if mesh.dim == 2:
        a, b = p[pairs[:, 0]], p[pairs[:, 1]]
        hit = segments_intersect(a[:, 0], a[:, 1], b[:, 0], b[:, 1])
    else:
        hit = triangles_intersect(p[pairs[:, 0]], p[pairs[:, 1]])
    bad = np.zeros(len(mesh.faces), dtype=bool)
    bad[pairs[hit].ravel()] = True
    return float(bad.mean())


def _fan_components(faces_at_v: list[np.ndarray], v: int) -> int:
    # faces around v are connected when they share an edge through v
    parent = list(range(len(faces_at_v)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner = {}
    for k, f in enumerate(faces_at_v):
        for u in f:
            if u == v:
                continue
            if u in owner:
                parent[find(k)] = find(owner[u])
            else:
                owner[u] = k
    return len({find(k) for k in range(len(faces_at_v))})


def manifold_ratios(mesh: Mesh):
    """``(nme_ratio, nmv_ratio)``.

    3D: edges with more than two faces over all edges, and vertices whose face
    fan splits into several edge-connected pieces over all vertices.
    2D: both count vertices with more than two incident segments.
    """
    nv = len(mesh.vertices)
    if len(mesh.faces) == 0 or nv == 0:
        return 0.0, 0.0
    if mesh.dim == 2:
        deg = np.bincount(mesh.faces.ravel(), minlength=nv)
        ratio = float((deg > 2).sum() / nv)
        return ratio, ratio
    table = _edge_faces(mesh.faces)
    nme = sum(len(fs) > 2 for fs in table.values()) / len(table)
    incident = defaultdict(list)
    for f in mesh.faces:
        for v in f:
            incident[int(v)].append(tuple(int(x) for x in f))
    bad = sum(_fan_components(fs, v) > 1 for v, fs in incident.items())
    return float(nme), float(bad / nv)


def mesh_quality(mesh: Mesh):
    """``(ar_mean, si_ratio, nme_ratio, nmv_ratio)``; AR is NaN for 2D meshes."""
    ar = float(aspect_ratios(mesh).mean()) if mesh.dim == 3 and len(mesh.faces) else float("nan")
    nme, nmv = manifold_ratios(mesh)
    return ar, self_intersection_ratio(mesh), nme, nmv


def evaluate(pred: Mesh, gt: Mesh, n_samples: int = DEFAULT_SAMPLES, tau: float = DEFAULT_TAU, seed: int = 0,
             runtime_seconds: float = 0.0) -> MetricsReport:
    if pred.dim != gt.dim:
        raise ValueError(f"dimension mismatch: pred {pred.dim}D, gt {gt.dim}D")
    cd, f1 = chamfer_f1(pred, gt, n_samples, tau, seed)
    nc = normal_consistency(pred, gt, n_samples, seed)
    ecd, ef1 = edge_metrics(pred, gt, tau=tau, n_samples=n_samples, seed=seed)
    ar, si, nme, nmv = mesh_quality(pred)
    return MetricsReport(cd, f1, nc, ecd, ef1, ar, si, nme, nmv, len(pred.vertices), len(pred.faces), runtime_seconds)
