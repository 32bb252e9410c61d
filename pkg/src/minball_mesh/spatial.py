"""Exact k-nearest-neighbour index and the per-face neighbour cache.

The tree itself is scipy's cKDTree. On top of it this module guarantees
(distance, index) lexicographic ordering so that results are reproducible and
identical to a linear scan, including ties.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


def worker_count() -> int:
    value = os.environ.get("MINBALL_THREADS")
    if value:
        return max(1, int(value))
    return 1


def _sq_distances(positions: np.ndarray, queries: np.ndarray, idx: np.ndarray) -> np.ndarray:
    diff = positions[idx] - queries[:, None, :]
    # sequential sum over coordinates, the same rounding as a plain (d * d).sum(-1);
    # einsum reorders the adds and can split exact geometric ties
    out = diff[..., 0] * diff[..., 0]
    for k in range(1, diff.shape[-1]):
        out += diff[..., k] * diff[..., k]
    return out


def _distances(positions: np.ndarray, queries: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.sqrt(_sq_distances(positions, queries, idx))


class SpatialIndex:
    """Immutable snapshot of point positions answering exact KNN queries."""

    def __init__(self, positions):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[0] == 0:
            raise ValueError("cannot index an empty point set")
        if not np.all(np.isfinite(positions)):
            raise ValueError("non-finite coordinates")
        self.positions = positions
        self.tree = cKDTree(positions)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def knn_many(self, queries, k: int):
        """``(M, k)`` indices and distances, ascending, ties resolved by lower index."""
        n = len(self)
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside [1, {n}]")
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, self.dim)
        if len(queries) == 0:
            return np.empty((0, k), dtype=np.int64), np.empty((0, k))
        idx = np.empty((len(queries), k), dtype=np.int64)
        dist = np.empty((len(queries), k))
        rows = np.arange(len(queries))
        kq = min(n, k + 2)
        while len(rows):
            ri, rd, raw_d = self._ordered_query(queries[rows], kq)
            if kq < n:
                # a tie (or near tie) straddling the cut may hide a lower index: widen those rows
                suspect = rd[:, k - 1] >= raw_d * (1.0 - 1e-12)
            else:
                suspect = np.zeros(len(rows), dtype=bool)
            done = ~suspect
            idx[rows[done]] = ri[done, :k]
            dist[rows[done]] = rd[done, :k]
            rows = rows[suspect]
            kq = min(n, 2 * kq)
        return idx[:, :k], dist[:, :k]

    def _ordered_query(self, queries, kq):
        raw_d, raw_i = self.tree.query(queries, k=kq, workers=worker_count())
        raw_i = raw_i.reshape(len(queries), kq).astype(np.int64)
        raw_d = raw_d.reshape(len(queries), kq)
        dist = _distances(self.positions, queries, raw_i)
        order = np.lexsort((raw_i, dist), axis=-1)
        return np.take_along_axis(raw_i, order, 1), np.take_along_axis(dist, order, 1), raw_d[:, -1]

    def knn(self, query, k: int) -> list[tuple[int, float]]:
        idx, dist = self.knn_many(np.asarray(query, dtype=np.float64)[None, :], k)
        return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]

    def nearest_excluding_many(self, centers, faces):
        """Nearest point outside each face, using the (dim+1)-neighbour trick.

        Only ``dim`` face vertices can precede the first outside point in the
        ordered neighbour list, so the first non-member among ``dim + 1``
        neighbours is exactly the nearest point of the complement.
        """
        faces = np.asarray(faces, dtype=np.int64)
        dim = faces.shape[1]
        if len(self) <= dim:
            raise ValueError("no points outside the face")
        idx, dist = self.knn_many(centers, dim + 1)
        return _first_outside(idx, dist, faces)

    def nearest_excluding(self, center, face) -> tuple[int, float]:
        i, d = self.nearest_excluding_many(np.asarray(center, dtype=np.float64)[None, :], np.asarray(face)[None, :])
        return int(i[0]), float(d[0])


def build(positions) -> SpatialIndex:
    return SpatialIndex(positions)


def knn(index: SpatialIndex, query, k: int):
    return index.knn(query, k)


def nearest_excluding(index: SpatialIndex, center, face):
    return index.nearest_excluding(center, face)


def _first_outside(idx: np.ndarray, dist: np.ndarray, faces: np.ndarray):
    member = (idx[:, :, None] == faces[:, None, :]).any(-1)
    col = np.argmax(~member, axis=1)
    rows = np.arange(len(idx))
    return idx[rows, col], dist[rows, col]


@dataclass(frozen=True)
class NeighborCache:
    """Candidate neighbours of each query face's ball center, frozen at build time."""

    faces: np.ndarray
    candidates: np.ndarray
    built_at_step: int = 0
    member: np.ndarray | None = None

    def __post_init__(self):
        if self.member is None:
            member = (self.candidates[:, :, None] == self.faces[:, None, :]).any(-1)
            object.__setattr__(self, "member", member)

    def __len__(self) -> int:
        return len(self.faces)

    def nearest_excluding_many(self, positions: np.ndarray, centers: np.ndarray):
        """Closest cached candidate outside each face, distances taken against current positions."""
        dist = _sq_distances(positions, centers, self.candidates)
        dist[self.member] = np.inf
        best = dist.min(axis=1, keepdims=True)
        big = np.iinfo(np.int64).max
        chosen = np.where(dist == best, self.candidates, big).min(axis=1)
        return chosen, np.sqrt(best[:, 0])


def build_cache(index: SpatialIndex, faces, ball_centers, K: int, step: int = 0) -> NeighborCache:
    faces = np.asarray(faces, dtype=np.int64)
    if K < 1:
        raise ValueError("K must be at least 1")
    dim = faces.shape[1] if faces.ndim == 2 else index.dim
    if K + dim > len(index):
        raise ValueError(f"K + dim = {K + dim} exceeds the number of points {len(index)}")
    idx, _ = index.knn_many(ball_centers, K + dim)
    return NeighborCache(faces, idx, step)


def cached_nearest_excluding(cache: NeighborCache, face_ordinal: int, center, face, positions) -> tuple[int, float]:
    """Single-face lookup; ``face`` must match the cached face at ``face_ordinal``."""
    face = np.sort(np.asarray(face, dtype=np.int64))
    if not np.array_equal(face, cache.faces[face_ordinal]):
        raise ValueError("face does not match the cached entry")
    sub = NeighborCache(cache.faces[face_ordinal:face_ordinal + 1], cache.candidates[face_ordinal:face_ordinal + 1])
    i, d = sub.nearest_excluding_many(positions, np.asarray(center, dtype=np.float64)[None, :])
    return int(i[0]), float(d[0])
