"""Minimum bounding balls, signed distances and the sigmoid-coefficient schedule.

Every routine here comes in a vectorised numpy flavour operating on ``(F, dim)``
face index arrays. The torch variants used by the losses live at the bottom of
the module and mirror the numpy formulas exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

# |d1 x d2|^2 < DEGENERATE_REL * (max edge)^4 marks a 3D face as degenerate
DEGENERATE_REL = 1e-24
COINCIDENT_TOL = 1e-12


@dataclass
class PointSet:
    """Positions plus per-point real values ``psi``."""

    positions: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.psi = np.ascontiguousarray(self.psi, dtype=np.float64).reshape(-1)
        if self.positions.ndim != 2 or self.positions.shape[1] not in (2, 3):
            raise ValueError(f"positions must be (N, 2) or (N, 3), got {self.positions.shape}")
        if self.psi.shape[0] != self.positions.shape[0]:
            raise ValueError("psi and positions disagree on N")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite coordinates")
        if np.any(self.psi < 0.0) or np.any(self.psi > 1.0):
            raise ValueError("psi must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "PointSet":
        return PointSet(self.positions.copy(), self.psi.copy())


@dataclass(frozen=True)
class MinBall:
    center: np.ndarray
    radius: float
    degenerate: bool = False


@dataclass
class SigmoidSchedule:
    alpha1: float
    epoch: int = 1

    def __post_init__(self):
        if self.alpha1 <= 0:
            raise ValueError("alpha1 must be positive")
        if self.epoch < 1:
            raise ValueError("epoch starts at 1")

    def advance(self) -> None:
        self.epoch += 1


def canonical_faces(faces) -> np.ndarray:
    """Sort each face's indices and drop duplicate faces (first occurrence order kept)."""
    faces = np.sort(np.asarray(faces, dtype=np.int64), axis=1)
    if len(faces) == 0:
        return faces
    _, first = np.unique(faces, axis=0, return_index=True)
    return faces[np.sort(first)]


def min_ball_2d(p1, p2) -> MinBall:
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    center = 0.5 * (p1 + p2)
    radius = 0.5 * float(np.linalg.norm(p1 - p2))
    return MinBall(center, radius, bool(np.linalg.norm(p1 - p2) <= COINCIDENT_TOL))


def min_ball_3d(p1, p2, p3) -> MinBall:
    c, r, deg = min_balls(np.array([p1, p2, p3], dtype=np.float64), np.array([[0, 1, 2]]))
    return MinBall(c[0], float(r[0]), bool(deg[0]))


def min_balls(positions: np.ndarray, faces: np.ndarray):
    """Centers, radii and degeneracy flags for a batch of faces.

    Degenerate faces get the vertex centroid as center and the largest vertex
    distance as radius; callers must consult the flag before trusting either.
    """
    positions = np.asarray(positions, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, positions.shape[1])
    dim = positions.shape[1]
    p = positions[faces]
    if dim == 2:
        center = 0.5 * (p[:, 0] + p[:, 1])
        diff = p[:, 1] - p[:, 0]
        length = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        return center, 0.5 * length, length <= COINCIDENT_TOL

    p1 = p[:, 0]
    d1 = p[:, 1] - p1
    d2 = p[:, 2] - p1
    c12 = np.cross(d1, d2)
    n2 = np.einsum("ij,ij->i", c12, c12)
    l1 = np.einsum("ij,ij->i", d1, d1)
    l2 = np.einsum("ij,ij->i", d2, d2)
    e3 = p[:, 2] - p[:, 1]
    l3 = np.einsum("ij,ij->i", e3, e3)
    max_edge2 = np.maximum(np.maximum(l1, l2), l3)
    degenerate = ~(n2 > DEGENERATE_REL * max_edge2 * max_edge2)
    safe = np.where(degenerate, 1.0, n2)
    num = l2[:, None] * np.cross(c12, d1) + l1[:, None] * np.cross(-c12, d2)
    center = p1 + num / (2.0 * safe[:, None])
    diff = center - p1
    radius = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(degenerate):
        centroid = p[degenerate].mean(axis=1)
        center[degenerate] = centroid
        radius[degenerate] = np.linalg.norm(p[degenerate] - centroid[:, None], axis=2).max(axis=1)
    return center, radius, degenerate


def signed_distance_bruteforce(ball: MinBall, points: PointSet | np.ndarray, face) -> float:
    """Nearest outside point's distance to the ball center minus the radius, by full scan."""
    positions = points.positions if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    face = np.asarray(face, dtype=np.int64)
    if positions.shape[0] <= len(face):
        raise ValueError("no points outside the face")
    if ball.degenerate:
        return -math.inf
    mask = np.ones(positions.shape[0], dtype=bool)
    mask[face] = False
    diff = positions[mask] - ball.center
    return float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).min() - ball.radius)


def signed_distances_bruteforce(positions: np.ndarray, faces: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Linear-scan signed distance for many faces; the baseline the benchmark times against."""
    positions = np.asarray(positions, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    centers, radii, degenerate = min_balls(positions, faces)
    out = np.empty(len(faces))
    sq = np.einsum("ij,ij->i", positions, positions)
    rows = np.arange(chunk)
    for start in range(0, len(faces), chunk):
        c = centers[start:start + chunk]
        f = faces[start:start + chunk]
        d2 = sq[None, :] - 2.0 * (c @ positions.T) + np.einsum("ij,ij->i", c, c)[:, None]
        for j in range(f.shape[1]):
            d2[rows[: len(f)], f[:, j]] = np.inf
        out[start:start + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    out -= radii
    out[degenerate] = -np.inf
    return out


def d_common(dim: int, x: float) -> float:
    if x <= 0:
        raise ValueError("grid edge must be positive")
    if dim == 2:
        return (math.sqrt(3.0) - 1.0) / 2.0 * x
    if dim == 3:
        return (math.sqrt(34.0) - 3.0 * math.sqrt(2.0)) / 8.0 * x
    raise ValueError(f"unsupported dimension {dim}")


def alpha1_for_grid(dim: int, x: float) -> float:
    return 32.0 / d_common(dim, x)


def alpha_min(schedule: SigmoidSchedule) -> float:
    return schedule.alpha1 / 2.0 ** (schedule.epoch - 1)


# -- torch versions --------------------------------------------------------


def safe_norm(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    # keeps the gradient finite (zero) at coincident points
    return torch.sqrt((v * v).sum(dim) + 1e-30)


def min_balls_torch(pos: torch.Tensor, faces: np.ndarray, degenerate: np.ndarray | None = None):
    """Differentiable centers and radii; ``degenerate`` rows are evaluated on a safe denominator."""
    idx = torch.as_tensor(faces, dtype=torch.long)
    p = pos[idx]
    if pos.shape[1] == 2:
        center = 0.5 * (p[:, 0] + p[:, 1])
        return center, 0.5 * safe_norm(p[:, 1] - p[:, 0])
    p1 = p[:, 0]
    d1 = p[:, 1] - p1
    d2 = p[:, 2] - p1
    c12 = torch.cross(d1, d2, dim=1)
    n2 = (c12 * c12).sum(1)
    if degenerate is not None and degenerate.any():
        n2 = torch.where(torch.as_tensor(degenerate), torch.ones_like(n2), n2)
    l1 = (d1 * d1).sum(1)
    l2 = (d2 * d2).sum(1)
    num = l2[:, None] * torch.cross(c12, d1, dim=1) + l1[:, None] * torch.cross(-c12, d2, dim=1)
    center = p1 + num / (2.0 * n2[:, None])
    return center, safe_norm(center - p1)
