"""Score-function optimisation of per-point existence probabilities, used to prune redundant points.

Every batch draws an independent subset of points, builds the hard
tessellation of that subset from a fixed set of query faces and scores it.
The gradient of the expected score w.r.t. the probabilities uses the
log-derivative identity, with batch losses standardised as a baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .config import ReinforceConfig
from .geometry import PointSet, min_balls
from .reconstruction import Adam
from .tessellation import BOUNDARY_REL, generate_query_faces

log = logging.getLogger(__name__)

PHI_MIN = 1e-4
PHI_MAX = 1.0 - 1e-4
EMPTY_LOSS = 1.0


@dataclass
class ExistenceProbs:
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.clip(np.asarray(self.phi, dtype=np.float64).reshape(-1), PHI_MIN, PHI_MAX)

    def __len__(self) -> int:
        return len(self.phi)


@dataclass
class SampleBatch:
    masks: np.ndarray  # (B, N) bool
    log_probs: np.ndarray
    losses: np.ndarray | None = None


def log_prob(phi: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """log P(mask | phi) for independent Bernoulli draws, one value per mask row."""
    masks = np.atleast_2d(masks)
    return np.where(masks, np.log(phi), np.log1p(-phi)).sum(axis=1)


def sample_batches(phi: ExistenceProbs | np.ndarray, B: int, rng: np.random.Generator) -> SampleBatch:
    """``B`` independent subsets; row ``i`` keeps point ``j`` with probability ``phi[j]``."""
    if B < 1:
        raise ValueError("B must be at least 1")
    p = phi.phi if isinstance(phi, ExistenceProbs) else np.asarray(phi, dtype=np.float64)
    masks = rng.random((B, len(p))) < p
    return SampleBatch(masks, log_prob(p, masks))


def step_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    """Counter-based stream: Philox keyed by the seed, counter set by (epoch, step)."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, epoch, step]))


@dataclass
class BallContents:
    """Query faces, their minimum balls and, per face, the points lying in the closed ball (CSR)."""

    faces: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def owner(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.faces)), np.diff(self.indptr))


def ball_contents(positions: np.ndarray, faces: np.ndarray) -> BallContents:
    positions = np.asarray(positions, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, positions.shape[1])
    centers, radii, degenerate = min_balls(positions, faces)
    tree = cKDTree(positions)
    rows = tree.query_ball_point(centers, radii * (1 + BOUNDARY_REL) + 1e-300) if len(faces) else []
    indptr = [0]
    indices = []
    for f, row in zip(faces, rows):
        row = np.setdiff1d(np.asarray(row, dtype=np.int64), f)
        indices.append(row)
        indptr.append(indptr[-1] + len(row))
    keep = ~degenerate
    if not keep.all():
        # a degenerate face never exists; give it its own vertices as permanent blockers
        for k in np.flatnonzero(degenerate):
            indices[k] = faces[k].copy()
        indptr = np.concatenate([[0], np.cumsum([len(x) for x in indices])])
    indices = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
    return BallContents(faces, centers, radii, np.asarray(indptr, dtype=np.int64), indices.astype(np.int64))


def batch_faces(mask: np.ndarray, query_faces: np.ndarray, balls: BallContents, points=None) -> np.ndarray:
    """Faces of the sampled subset: all vertices kept and no kept point in the ball.

    ``mask`` may be one row or a ``(B, N)`` stack; the result is a boolean
    ``(B, F)`` (or ``(F,)``) existence table over ``query_faces``.
    """
    single = np.ndim(mask) == 1
    masks = np.atleast_2d(np.asarray(mask, dtype=bool))
    faces = np.asarray(query_faces, dtype=np.int64)
    exists = masks[:, faces].all(axis=2)
    if len(balls.indices):
        hit = masks[:, balls.indices].astype(np.int64)
        blocked = np.zeros((len(masks), len(faces)), dtype=np.int64)
        np.add.at(blocked.T, balls.owner, hit.T)
        exists &= blocked == 0
    return exists[0] if single else exists


class HardLoss:
    """Chamfer loss of a hard (unweighted) tessellation against a target cloud.

    Faces are sampled by arc length / area at a fixed spacing, so splitting a
    straight segment at a collinear point barely changes the sample set.
    """

    def __init__(self, positions: np.ndarray, faces: np.ndarray, target: np.ndarray, spacing: float | None = None):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        self.target = np.asarray(target, dtype=np.float64)
        self.target_tree = cKDTree(self.target)
        if spacing is None:
            d, _ = self.target_tree.query(self.target, k=2)
            spacing = 0.25 * float(np.mean(d[:, 1]))
        self.spacing = spacing
        self._samples = [self._face_samples(f) for f in self.faces]
        self._rev = [self.target_tree.query(s)[0] for s in self._samples]
        self._cache: dict[bytes, float] = {}

    def _face_samples(self, face):
        p = self.positions[face]
        if len(face) == 2:
            n = max(1, int(np.ceil(np.linalg.norm(p[1] - p[0]) / self.spacing)))
            t = (np.arange(n) + 0.5) / n
            return p[0] + t[:, None] * (p[1] - p[0])
        e1, e2 = p[1] - p[0], p[2] - p[0]
        m = max(1, int(np.ceil(max(np.linalg.norm(e1), np.linalg.norm(e2)) / self.spacing)))
        i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        ok = i + j < m
        u = (i[ok] + 1.0 / 3.0) / m
        v = (j[ok] + 1.0 / 3.0) / m
        return p[0] + u[:, None] * e1 + v[:, None] * e2

    def recon(self, exists: np.ndarray) -> float:
        key = np.packbits(exists).tobytes()
        if key in self._cache:
            return self._cache[key]
        ids = np.flatnonzero(exists)
        if len(ids) == 0:
            value = EMPTY_LOSS
        else:
            samples = np.concatenate([self._samples[k] for k in ids])
            rev = np.concatenate([self._rev[k] for k in ids])
            fwd, _ = cKDTree(samples).query(self.target)
            value = float(fwd.mean() + rev.mean())
        self._cache[key] = value
        return value


def batch_loss(points, mask, faces, target, eps_card: float, hard: HardLoss | None = None,
               exists: np.ndarray | None = None) -> float:
    """Reconstruction loss of the subset's hard faces plus ``eps_card`` per kept point.

    ``faces`` are the query faces; ``exists`` (if given) says which of them
    the subset realises, otherwise every face in ``faces`` is taken as present.
    """
    positions = points.positions if isinstance(points, PointSet) else np.asarray(points)
    mask = np.asarray(mask, dtype=bool)
    if hard is None:
        hard = HardLoss(positions, faces, target)
    if exists is None:
        exists = np.ones(len(faces), dtype=bool)
    if not mask.any():
        return EMPTY_LOSS
    return hard.recon(exists) + eps_card * int(mask.sum())


def estimate_gradient(phi: ExistenceProbs | np.ndarray, batch: SampleBatch, standardize: bool = True) -> np.ndarray:
    """Score-function estimate of d E[L] / d phi from one batch of masks and losses."""
    p = phi.phi if isinstance(phi, ExistenceProbs) else np.asarray(phi, dtype=np.float64)
    losses = np.asarray(batch.losses, dtype=np.float64)
    if standardize:
        if len(losses) < 2:
            raise ValueError("standardisation needs at least two batches")
        losses = (losses - losses.mean()) / max(float(losses.std()), 1e-8)
    score = np.where(batch.masks, 1.0 / p, -1.0 / (1.0 - p))
    return (score * losses[:, None]).mean(axis=0)


def exact_expected_loss_grad(phi: np.ndarray, loss_of_mask) -> tuple[float, np.ndarray]:
    """Expected loss and its exact gradient by enumerating all 2^N masks (small N only)."""
    phi = np.asarray(phi, dtype=np.float64)
    n = len(phi)
    if n > 16:
        raise ValueError("enumeration limited to 16 points")
    masks = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(bool)
    prob = np.exp(log_prob(phi, masks))
    losses = np.array([loss_of_mask(m) for m in masks])
    score = np.where(masks, 1.0 / phi, -1.0 / (1.0 - phi))
    return float(prob @ losses), (prob * losses) @ score


@dataclass
class ReinforceResult:
    points: PointSet
    phi: np.ndarray
    kept: np.ndarray  # indices into the input point set
    history: list = field(default_factory=list)


def reinforce_optimize(points: PointSet, target, config: ReinforceConfig, seed: int = 0,
                       knn_k: int = 10) -> ReinforceResult:
    """Alternate ``n1`` Adam steps on phi with pruning of points whose phi drops below the threshold."""
    if config.lr_phi is None or config.lr_phi <= 0:
        raise ValueError("lr_phi must be given and positive")
    target = np.asarray(target, dtype=np.float64)
    kept = np.arange(len(points))
    pts = points
    history = []
    phi = ExistenceProbs(np.full(len(pts), config.phi_init))
    for epoch in range(config.n0):
        faces = generate_query_faces(pts, knn_k)
        balls = ball_contents(pts.positions, faces)
        hard = HardLoss(pts.positions, faces, target, config.sample_spacing)
        adam = Adam(config.lr_phi)
        for step in range(config.n1):
            batch = sample_batches(phi, config.batch, step_rng(seed, epoch, step))
            exists = batch_faces(batch.masks, faces, balls)
            batch.losses = np.array([
                batch_loss(pts, m, faces, target, config.eps_card, hard, e) for m, e in zip(batch.masks, exists)
            ])
            grad = estimate_gradient(phi, batch, standardize=config.batch >= 2)
            phi = ExistenceProbs(adam.step(phi.phi, grad))
            if step % 50 == 0:
                history.append({"epoch": epoch, "step": step, "mean_loss": float(batch.losses.mean()),
                                "n_points": len(pts)})
        survive = phi.phi >= config.prune_threshold
        if not survive.any():
            raise RuntimeError("every point was pruned")
        log.info("epoch %d: kept %d of %d points", epoch, int(survive.sum()), len(pts))
        kept = kept[survive]
        pts = PointSet(pts.positions[survive], pts.psi[survive])
        phi = ExistenceProbs(phi.phi[survive])
    return ReinforceResult(pts, phi.phi, kept, history)
