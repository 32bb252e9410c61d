"""Synthetic inputs shared by the experiments and tests."""

from __future__ import annotations

import numpy as np

from .geometry import PointSet
from .tessellation import Mesh

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def circle_cloud(n: int = 2000, seed: int = 0, radius: float = 1.0) -> np.ndarray:
    """``n`` points drawn uniformly on a circle."""
    t = np.random.default_rng(seed).uniform(0.0, 2 * np.pi, n)
    return radius * np.stack([np.cos(t), np.sin(t)], axis=1)


def sphere_cloud(n: int = 20_000, seed: int = 0, radius: float = 1.0) -> np.ndarray:
    """``n`` points drawn uniformly on a sphere."""
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def circle_mesh(n: int = 4096, radius: float = 1.0) -> Mesh:
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    v = radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    i = np.arange(n)
    return Mesh(v, np.stack([i, (i + 1) % n], axis=1), i)


def sphere_mesh(subdivisions: int = 5, radius: float = 1.0) -> Mesh:
    """Icosphere: a subdivided icosahedron projected onto the sphere."""
    g = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0], [0, -1, g], [0, 1, g],
                  [0, -1, -g], [0, 1, -g], [g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1]], float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mid = len(v) + inv.reshape(3, -1).T
        v = np.concatenate([v, v[uniq].mean(1)])
        a, b, c = f.T
        ab, bc, ca = mid.T
        f = np.concatenate([np.stack(t, 1) for t in ((a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca))])
    v = radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh(v, f, np.arange(len(v)))


def square_outline(n: int = 400) -> np.ndarray:
    """``n`` evenly spaced samples on the unit square's boundary."""
    t = np.arange(n) * 4.0 / n
    side = np.floor(t).astype(int)
    u = t - side
    a, b = SQUARE[side], np.roll(SQUARE, -1, axis=0)[side]
    return a + u[:, None] * (b - a)


def square_with_midpoints() -> PointSet:
    """Square corners plus one redundant collinear midpoint per edge, all real."""
    mids = 0.5 * (SQUARE + np.roll(SQUARE, -1, axis=0))
    return PointSet(np.concatenate([SQUARE, mids]), np.ones(8))
