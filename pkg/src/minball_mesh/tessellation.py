"""Face existence probabilities, query-face generation and hard mesh extraction."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .geometry import PointSet, canonical_faces, min_balls
from .spatial import NeighborCache, SpatialIndex

# psi at or above this counts as "real" when gathering query faces
ACTIVE_PSI = 0.5


@dataclass
class FaceProbability:
    lambda_min: np.ndarray
    lambda_real: np.ndarray
    lambda_: np.ndarray


@dataclass
class Mesh:
    """Vertices and faces in local indexing; ``point_ids`` maps back to the source PointSet."""

    vertices: np.ndarray
    faces: np.ndarray
    point_ids: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @classmethod
    def from_points(cls, positions: np.ndarray, faces: np.ndarray) -> "Mesh":
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, positions.shape[1])
        used, local = np.unique(faces, return_inverse=True)
        return cls(positions[used].copy(), local.reshape(faces.shape), used)


def face_keys(faces: np.ndarray, n: int) -> np.ndarray:
    """Injective int64 key per canonical (sorted) face."""
    faces = np.asarray(faces, dtype=np.int64)
    key = np.zeros(len(faces), dtype=np.int64)
    for j in range(faces.shape[1]):
        key = key * n + faces[:, j]
    return key


def unique_faces(faces: np.ndarray, n: int) -> np.ndarray:
    faces = np.sort(np.asarray(faces, dtype=np.int64), axis=1)
    if len(faces) == 0:
        return faces
    _, first = np.unique(face_keys(faces, n), return_index=True)
    return faces[np.sort(first)]


def lambda_real(psi: np.ndarray, faces: np.ndarray):
    """Minimum psi over each face and the vertex attaining it (lowest index on ties)."""
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    vals = np.asarray(psi)[faces]
    col = np.argmin(vals, axis=1)  # faces are sorted, so first occurrence is the lowest index
    rows = np.arange(len(faces))
    return vals[rows, col], faces[rows, col]


# points this close (relative to the radius) to a ball's sphere count as blocking,
# so exact cospherical ties do not extract overlapping faces from rounding noise
BOUNDARY_REL = 1e-9


def signed_distances(positions: np.ndarray, faces: np.ndarray, lookup=None):
    """Signed distance of each face's minimum ball to the rest of the points.

    Returns ``(distance, nearest_index, centers, radii, degenerate)``; degenerate
    faces carry ``-inf``. ``lookup`` is a SpatialIndex over ``positions`` or a
    NeighborCache built for exactly these faces; ``None`` builds a fresh index.
    """
    positions = np.asarray(positions, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, positions.shape[1])
    centers, radii, degenerate = min_balls(positions, faces)
    if len(faces) == 0:
        return np.empty(0), np.empty(0, dtype=np.int64), centers, radii, degenerate
    if lookup is None:
        lookup = SpatialIndex(positions)
    if isinstance(lookup, NeighborCache):
        if len(lookup) != len(faces):
            raise ValueError("cache was built for a different face list")
        nearest, dist = lookup.nearest_excluding_many(positions, centers)
    else:
        nearest, dist = lookup.nearest_excluding_many(centers, faces)
    d = dist - radii
    d[degenerate] = -np.inf
    return d, nearest, centers, radii, degenerate


def lambda_min(points: PointSet, faces: np.ndarray, alpha: float, lookup=None) -> np.ndarray:
    d = signed_distances(points.positions, faces, lookup)[0]
    return expit(d * alpha)


def face_probability(points: PointSet, faces: np.ndarray, alpha: float, lookup=None) -> FaceProbability:
    lm = lambda_min(points, faces, alpha, lookup)
    lr, _ = lambda_real(points.psi, faces)
    return FaceProbability(lm, lr, lm * lr)


def knn_faces(positions: np.ndarray, members: np.ndarray, k: int) -> np.ndarray:
    """Canonical faces built from each member point and (dim-1)-subsets of its k nearest members."""
    dim = positions.shape[1]
    members = np.asarray(members, dtype=np.int64)
    if len(members) < dim:
        raise ValueError(f"need at least {dim} active points, got {len(members)}")
    keff = min(k, len(members) - 1)
    if keff < dim - 1:
        return np.empty((0, dim), dtype=np.int64)
    index = SpatialIndex(positions[members])
    nbr, _ = index.knn_many(positions[members], keff + 1)
    nbr = members[nbr[:, 1:]]
    if dim == 2:
        faces = np.stack([np.repeat(members, keff), nbr.reshape(-1)], axis=1)
    else:
        a, b = np.triu_indices(keff, 1)
        faces = np.stack(
            [np.repeat(members, len(a)), nbr[:, a].reshape(-1), nbr[:, b].reshape(-1)], axis=1
        )
    # duplicate points can make a face repeat a vertex
    faces = np.sort(faces, axis=1)
    keep = np.all(np.diff(faces, axis=1) > 0, axis=1)
    return unique_faces(faces[keep], len(positions))


def generate_query_faces(
    points: PointSet,
    knn_k: int = 10,
    exact: bool = False,
    threshold: float = ACTIVE_PSI,
    oracle_limit: int | None = None,
) -> np.ndarray:
    """Candidate faces among points whose psi reaches ``threshold``.

    With ``exact`` the candidates are also united with the Delaunay faces of the
    whole point set whose vertices are all active, as long as the brute-force
    oracle is affordable at this size.
    """
    active = np.flatnonzero(points.psi >= threshold)
    dim = points.dim
    faces = knn_faces(points.positions, active, knn_k)
    if exact:
        limit = oracle_limit if oracle_limit is not None else (512 if dim == 2 else 64)
        if len(points) <= limit:
            dt, _ = delaunay_oracle(points.positions)
            if len(dt):
                dt = dt[np.all(points.psi[dt] >= threshold, axis=1)]
                faces = unique_faces(np.concatenate([faces, dt]), len(points))
    return faces


def extract_mesh(points: PointSet, threshold: float = 0.5, lookup=None, faces=None, knn_k: int = 10) -> Mesh:
    """Hard tessellation: faces with an empty minimum ball whose vertices all have psi above ``threshold``."""
    dim = points.dim
    if faces is None:
        active = np.flatnonzero(points.psi > threshold)
        if len(active) < dim:
            return Mesh(np.empty((0, dim)), np.empty((0, dim), dtype=np.int64), np.empty(0, dtype=np.int64))
        faces = knn_faces(points.positions, active, knn_k)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, dim)
    if len(faces):
        faces = faces[np.all(points.psi[faces] > threshold, axis=1)]
    if len(faces) and isinstance(lookup, NeighborCache):
        lookup = None  # a cache is tied to its own face list
    if len(faces):
        d, _, _, radii, _ = signed_distances(points.positions, faces, lookup)
        faces = faces[d > BOUNDARY_REL * radii]
    return Mesh.from_points(points.positions, faces)


def min_ball_faces(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Boolean mask: which of ``faces`` satisfy the empty-minimum-ball condition exactly."""
    if len(faces) == 0:
        return np.zeros(0, dtype=bool)
    d, _, _, radii, _ = signed_distances(positions, faces)
    return d > BOUNDARY_REL * radii


def _ball_axis(positions: np.ndarray, faces: np.ndarray):
    centers, radii, degenerate = min_balls(positions, faces)
    p = positions[faces]
    if positions.shape[1] == 2:
        e = p[:, 1] - p[:, 0]
        n = np.stack([-e[:, 1], e[:, 0]], axis=1)
    else:
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norm = np.linalg.norm(n, axis=1)
    n = n / np.where(norm > 0, norm, 1.0)[:, None]
    return centers, radii, n, degenerate


def delaunay_oracle(positions, tol: float = 1e-9, chunk: int = 4096):
    """Brute-force Delaunay faces: every face owning at least one empty bounding ball.

    The bounding balls of a face have centers ``c + t n`` on the bisector (2D)
    or circumaxis (3D) with squared radius ``r^2 + t^2``. A point p stays out of
    the open ball iff ``|p - c|^2 - r^2 >= 2 t n.(p - c)``, a half-line in t, so
    emptiness of some ball is feasibility of a one-dimensional interval.

    Returns ``(faces, boundary)``: all faces whose feasible interval is
    non-empty, and the subset where it collapses to (nearly) a single t, i.e.
    cocircular/cospherical configurations.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n, dim = positions.shape
    combos = np.array(list(itertools.combinations(range(n), dim)), dtype=np.int64).reshape(-1, dim)
    scale = np.ptp(positions, axis=0).max() if n else 1.0
    found, boundary = [], []
    for start in range(0, len(combos), chunk):
        f = combos[start:start + chunk]
        c, r, normal, degenerate = _ball_axis(positions, f)
        rel = positions[None, :, :] - c[:, None, :]
        a = (rel * rel).sum(-1) - (r * r)[:, None]
        b = 2.0 * (rel * normal[:, None, :]).sum(-1)
        member = np.zeros(a.shape, dtype=bool)
        member[np.arange(len(f))[:, None], f] = True
        eps = tol * scale
        pos = (b > eps * 1e-3) & ~member
        neg = (b < -eps * 1e-3) & ~member
        flat = ~pos & ~neg & ~member
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = a / b
        hi = np.where(pos, ratio, np.inf).min(axis=1)
        lo = np.where(neg, ratio, -np.inf).max(axis=1)
        flat_bad = (flat & (a < -eps * scale)).any(axis=1)
        flat_touch = (flat & (np.abs(a) <= eps * scale)).any(axis=1)
        ok = (lo <= hi + eps) & ~flat_bad & ~degenerate
        tight = ok & ((hi - lo <= eps) | flat_touch)
        found.append(f[ok])
        boundary.append(f[tight])
    if not found:
        empty = np.empty((0, dim), dtype=np.int64)
        return empty, empty
    return np.concatenate(found), np.concatenate(boundary)
