"""Reconstruction objective: expected Chamfer distance, triangle quality and real-value terms.

Values and gradients are computed in float64 torch. Every discrete choice
(nearest outside point of a ball, top-k samples per target, nearest target per
sample, argmin psi per face) is made in numpy on detached values and then held
fixed, so gradients are exact for the frozen structure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from .geometry import PointSet, min_balls, min_balls_torch, safe_norm
from .spatial import NeighborCache, SpatialIndex, _sq_distances, worker_count
from .tessellation import lambda_real

log = logging.getLogger(__name__)

K_CD = 8
AR_CAP = 1e4
DTYPE = torch.float64


@dataclass
class LossWeights:
    lambda_qual: float = 0.0
    lambda_real: float = 0.0
    eps_card: float = 0.0

    def __post_init__(self):
        if min(self.lambda_qual, self.lambda_real, self.eps_card) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class WeightedSampleCloud:
    positions: np.ndarray
    weights: np.ndarray
    face_ids: np.ndarray
    bary: np.ndarray = field(repr=False, default=None)


def barycentric_pattern(dim: int, samples_per_face: int) -> np.ndarray:
    """Deterministic sample pattern, ``(S, dim)`` barycentric weights per face."""
    k = samples_per_face
    if k < 1:
        raise ValueError("samples_per_face must be >= 1")
    if dim == 2:
        t = (np.arange(k) + 0.5) / k
        return np.stack([1.0 - t, t], axis=1)
    if k == 1:
        return np.full((1, 3), 1.0 / 3.0)
    if k == 4:
        return np.array(
            [[1 / 3, 1 / 3, 1 / 3], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
        )
    m = int(round(np.sqrt(k)))
    if m * m != k:
        raise ValueError("3D sample counts must be 1, 4 or a perfect square")
    # centroids of the m*m sub-triangles of the regular subdivision
    out = []
    for i in range(m):
        for j in range(m - i):
            out.append([(i + 1 / 3) / m, (j + 1 / 3) / m])
            if i + j < m - 1:
                out.append([(i + 2 / 3) / m, (j + 2 / 3) / m])
    uv = np.array(out)
    return np.column_stack([1.0 - uv.sum(1), uv])


def sample_faces(points, faces, probs, samples_per_face: int = 1) -> WeightedSampleCloud:
    positions = points.positions if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, positions.shape[1])
    bary = barycentric_pattern(positions.shape[1], samples_per_face)
    pts = np.einsum("sj,fjd->fsd", bary, positions[faces]).reshape(-1, positions.shape[1])
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    return WeightedSampleCloud(
        pts, np.repeat(probs, len(bary)), np.repeat(np.arange(len(faces)), len(bary)), bary
    )


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def _knn(points: np.ndarray, queries: np.ndarray, k: int, tree: cKDTree | None = None):
    tree = tree if tree is not None else cKDTree(points)
    d, i = tree.query(queries, k=k, workers=worker_count())
    i = np.asarray(i, dtype=np.int64).reshape(len(queries), k)
    d = np.asarray(d).reshape(len(queries), k)
    if k > 1:
        # exact recomputation + index tie-break keeps the order reproducible
        diff = points[i] - queries[:, None, :]
        d = np.sqrt((diff * diff).sum(-1))
        order = np.lexsort((i, d), axis=-1)
        i = np.take_along_axis(i, order, 1)
    return i


@dataclass
class ChamferStructure:
    forward_idx: np.ndarray
    reverse_idx: np.ndarray


def chamfer_structure(samples: np.ndarray, target: np.ndarray, k_cd: int = K_CD, target_tree=None) -> ChamferStructure:
    k = min(k_cd, len(samples))
    fwd = _knn(samples, target, k)
    rev = _knn(target, samples, 1, target_tree)[:, 0]
    return ChamferStructure(fwd, rev)


@dataclass
class ChamferCandidates:
    """Neighbour candidates frozen at a refresh; the exact order is redone each step among them."""

    forward: np.ndarray  # (T, Kf) sample ids per target point
    reverse: np.ndarray  # (S, Kr) target ids per sample


def chamfer_candidates(samples: np.ndarray, target: np.ndarray, k_cd: int, margin: int,
                       target_tree: cKDTree | None = None) -> ChamferCandidates:
    # rows sorted by index, so a stable sort on distance breaks ties toward the lower index
    fwd = np.sort(_knn(samples, target, min(k_cd + margin, len(samples))), axis=1)
    rev = np.sort(_knn(target, samples, min(1 + margin, len(target)), target_tree), axis=1)
    return ChamferCandidates(fwd, rev)


def _ordered(points: np.ndarray, queries: np.ndarray, cand: np.ndarray, k: int) -> np.ndarray:
    d = _sq_distances(points, queries, cand)
    if k == 1:
        return np.take_along_axis(cand, d.argmin(axis=1)[:, None], 1)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(cand, order, 1)


def cached_chamfer_structure(samples: np.ndarray, target: np.ndarray, cand: ChamferCandidates,
                             k_cd: int = K_CD) -> ChamferStructure:
    fwd = _ordered(samples, target, cand.forward, min(k_cd, cand.forward.shape[1]))
    rev = _ordered(target, samples, cand.reverse, 1)[:, 0]
    return ChamferStructure(fwd, rev)


def expected_chamfer_torch(samples: torch.Tensor, weights: torch.Tensor, target: torch.Tensor, structure: ChamferStructure):
    """Forward (target->samples, expectation over existence) plus weighted reverse term.

    Returns ``(value, reverse_defined)``.
    """
    idx = torch.as_tensor(structure.forward_idx)
    d = safe_norm(target[:, None, :] - samples[idx])
    w = weights[idx]
    keep = torch.cumprod(1.0 - w, dim=1)
    before = torch.cat([torch.ones_like(keep[:, :1]), keep[:, :-1]], dim=1)
    forward = (d * w * before).sum(1) + d[:, -1] * keep[:, -1]
    value = forward.mean()
    wsum = weights.sum()
    if float(wsum.detach()) <= 0.0:
        return value, False
    rd = safe_norm(samples - target[torch.as_tensor(structure.reverse_idx)])
    return value + (weights * rd).sum() / wsum, True


def expected_chamfer(samples: WeightedSampleCloud, target, k_cd: int = K_CD) -> float:
    target = np.asarray(target, dtype=np.float64)
    if len(target) == 0 or len(samples.positions) == 0:
        raise ValueError("expected Chamfer needs a non-empty target and at least one sample")
    st = chamfer_structure(samples.positions, target, k_cd)
    value, ok = expected_chamfer_torch(_as_tensor(samples.positions), _as_tensor(samples.weights), _as_tensor(target), st)
    if not ok:
        log.warning("all sample weights are zero; returning the forward term only")
    return float(value)


def classic_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric, unsquared: mean over b of nearest-a distance plus mean over a of nearest-b distance."""
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(db) + np.mean(da))


def aspect_ratio_torch(pos: torch.Tensor, faces: np.ndarray) -> torch.Tensor:
    """Circumradius over twice the inradius, 1 for equilateral triangles, capped for slivers."""
    p = pos[torch.as_tensor(faces, dtype=torch.long)]
    a = safe_norm(p[:, 1] - p[:, 2])
    b = safe_norm(p[:, 2] - p[:, 0])
    c = safe_norm(p[:, 0] - p[:, 1])
    cr = torch.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], dim=1)
    den = 4.0 * (cr * cr).sum(1)
    num = a * b * c * (a + b + c)
    capped = den * AR_CAP <= num
    ar = num / torch.where(capped, torch.ones_like(den), den)
    return torch.where(capped, torch.full_like(ar, AR_CAP), ar)


def aspect_ratio(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return aspect_ratio_torch(_as_tensor(positions), np.asarray(faces, dtype=np.int64)).numpy()


def quality_loss_torch(pos: torch.Tensor, faces: np.ndarray, probs: torch.Tensor) -> torch.Tensor:
    if pos.shape[1] == 2 or len(faces) == 0:
        return torch.zeros((), dtype=DTYPE)
    return (aspect_ratio_torch(pos, faces) * probs).mean()


def quality_loss(points, faces, probs) -> float:
    positions = points.positions if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    return float(quality_loss_torch(_as_tensor(positions), np.asarray(faces, dtype=np.int64), _as_tensor(probs)))


def real_loss(psi) -> float:
    psi = psi.psi if isinstance(psi, PointSet) else np.asarray(psi, dtype=np.float64)
    return float(np.mean(psi))


def total_loss(recon, qual, real, weights: LossWeights):
    return recon + weights.lambda_qual * qual + weights.lambda_real * real


# -- full objective --------------------------------------------------------


@dataclass
class Structure:
    """Discrete choices frozen during one loss evaluation."""

    nearest: np.ndarray
    degenerate: np.ndarray
    argmin: np.ndarray
    chamfer: ChamferStructure

    def same_as(self, other: "Structure") -> bool:
        return (
            np.array_equal(self.nearest, other.nearest)
            and np.array_equal(self.degenerate, other.degenerate)
            and np.array_equal(self.argmin, other.argmin)
            and np.array_equal(self.chamfer.forward_idx, other.chamfer.forward_idx)
            and np.array_equal(self.chamfer.reverse_idx, other.chamfer.reverse_idx)
        )


@dataclass
class Objective:
    """Loss of a probabilistic mesh against a target cloud.

    ``fixed_lambda_min`` switches to the real-value configuration: the
    minimum-ball probabilities become constants and only psi is live.
    Otherwise positions are live and psi only enters through the frozen
    argmin vertex of each face.
    """

    faces: np.ndarray
    target: np.ndarray
    alpha: float
    weights: LossWeights
    samples_per_face: int = 1
    k_cd: int = K_CD
    lookup: SpatialIndex | NeighborCache | None = None
    fixed_lambda_min: np.ndarray | None = None
    chamfer_margin: int = 0  # > 0: reuse neighbour candidates from the first structure call

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self._target_t = _as_tensor(self.target)
        self._target_tree = cKDTree(self.target)
        dim = self.target.shape[1]
        self._bary = torch.as_tensor(barycentric_pattern(dim, self.samples_per_face), dtype=DTYPE)
        self._candidates = None

    def _nearest(self, positions: np.ndarray):
        centers, _, degenerate = min_balls(positions, self.faces)
        if self.fixed_lambda_min is not None:
            return np.zeros(len(self.faces), dtype=np.int64), degenerate
        lookup = self.lookup
        if lookup is None or (isinstance(lookup, SpatialIndex) and not np.array_equal(lookup.positions, positions)):
            lookup = SpatialIndex(positions)
        if isinstance(lookup, NeighborCache):
            nearest, _ = lookup.nearest_excluding_many(positions, centers)
        else:
            nearest, _ = lookup.nearest_excluding_many(centers, self.faces)
        return nearest, degenerate

    def structure(self, positions: np.ndarray, psi: np.ndarray) -> Structure:
        positions = np.asarray(positions, dtype=np.float64)
        nearest, degenerate = self._nearest(positions)
        _, argmin = lambda_real(psi, self.faces)
        samples = np.einsum("sj,fjd->fsd", self._bary.numpy(), positions[self.faces]).reshape(-1, positions.shape[1])
        if self.chamfer_margin <= 0:
            ch = chamfer_structure(samples, self.target, self.k_cd, self._target_tree)
        else:
            if self._candidates is None:
                self._candidates = chamfer_candidates(samples, self.target, self.k_cd, self.chamfer_margin,
                                                      self._target_tree)
            ch = cached_chamfer_structure(samples, self.target, self._candidates, self.k_cd)
        return Structure(nearest, degenerate, argmin, ch)

    def face_weights(self, pos: torch.Tensor, psi: torch.Tensor, st: Structure):
        """Per-face ``(Lambda_min, Lambda)`` as tensors."""
        if self.fixed_lambda_min is not None:
            lmin = _as_tensor(self.fixed_lambda_min)
        else:
            centers, radii = min_balls_torch(pos, self.faces, st.degenerate)
            dist = safe_norm(pos[torch.as_tensor(st.nearest)] - centers) - radii
            lmin = torch.sigmoid(dist * self.alpha)
            if st.degenerate.any():
                lmin = torch.where(torch.as_tensor(st.degenerate), torch.zeros_like(lmin), lmin)
        lreal = psi[torch.as_tensor(st.argmin)]
        return lmin, lmin * lreal

    def evaluate(self, pos: torch.Tensor, psi: torch.Tensor, st: Structure | None = None):
        """Total loss and its parts; ``st`` defaults to the structure at the current values."""
        if st is None:
            st = self.structure(pos.detach().numpy(), psi.detach().numpy())
        dim = pos.shape[1]
        if len(self.faces) == 0:
            raise ValueError("objective has no faces")
        _, lam = self.face_weights(pos, psi, st)
        samples = torch.einsum("sj,fjd->fsd", self._bary, pos[torch.as_tensor(self.faces)]).reshape(-1, dim)
        w = lam.repeat_interleave(len(self._bary))
        recon, _ = expected_chamfer_torch(samples, w, self._target_t, st.chamfer)
        qual = quality_loss_torch(pos, self.faces, lam) if self.weights.lambda_qual > 0 else torch.zeros((), dtype=DTYPE)
        real = psi.mean()
        total = recon + self.weights.lambda_qual * qual + self.weights.lambda_real * real
        return total, {"recon": float(recon.detach()), "qual": float(qual.detach()), "real": float(real.detach())}

    def value(self, positions: np.ndarray, psi: np.ndarray, st: Structure | None = None) -> float:
        with torch.no_grad():
            total, _ = self.evaluate(_as_tensor(positions), _as_tensor(psi), st)
        return float(total)

    def gradients(self, positions: np.ndarray, psi: np.ndarray, st: Structure | None = None):
        pos = _as_tensor(positions).clone().requires_grad_(True)
        ps = _as_tensor(psi).clone().requires_grad_(True)
        total, parts = self.evaluate(pos, ps, st)
        gp, gs = torch.autograd.grad(total, (pos, ps), allow_unused=True)
        gp = np.zeros_like(positions) if gp is None else gp.numpy()
        gs = np.zeros_like(psi) if gs is None else gs.numpy()
        return float(total.detach()), gp, gs, parts


def grad_positions(points: PointSet, faces, target, alpha: float, lookup=None, weights: LossWeights | None = None,
                   samples_per_face: int = 1) -> np.ndarray:
    obj = Objective(faces, target, alpha, weights or LossWeights(), samples_per_face, lookup=lookup)
    return obj.gradients(points.positions, points.psi)[1]


def grad_psi(points: PointSet, faces, target, lambda_min_fixed, weights: LossWeights | None = None,
             samples_per_face: int = 1) -> np.ndarray:
    obj = Objective(faces, target, 1.0, weights or LossWeights(), samples_per_face,
                    fixed_lambda_min=np.asarray(lambda_min_fixed, dtype=np.float64))
    return obj.gradients(points.positions, points.psi)[2]


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    n_checked: int
    n_excluded: int
    n_failed: int
    rel_errors: np.ndarray = field(repr=False)

    @property
    def pass_fraction(self) -> float:
        return 1.0 - self.n_failed / max(self.n_checked, 1)


def finite_diff_check(objective: Objective, points: PointSet, wrt: str = "positions", h: float = 1e-5,
                      tolerance: float = 1e-3, tie_radius: float = 10.0, floor: float = 1e-6) -> FiniteDiffReport:
    """Analytic gradient against central differences, one coordinate at a time.

    A coordinate is excluded when moving it by ``tie_radius * h`` either way
    changes any frozen discrete choice; there the loss is only one-sided
    differentiable. Relative error is ``|a - f| / max(|a|, |f|, floor)``.
    """
    pos0 = points.positions.copy()
    psi0 = points.psi.copy()
    st0 = objective.structure(pos0, psi0)
    _, gp, gs, _ = objective.gradients(pos0, psi0, st0)
    analytic = (gp if wrt == "positions" else gs).reshape(-1)
    base = (pos0 if wrt == "positions" else psi0).reshape(-1)

    def with_value(flat):
        if wrt == "positions":
            return flat.reshape(pos0.shape), psi0
        return pos0, flat

    errors, excluded = [], 0
    for i in range(base.size):
        probe = base.copy()
        ties = False
        for step in (tie_radius * h, -tie_radius * h):
            probe[i] = base[i] + step
            if not objective.structure(*with_value(probe)).same_as(st0):
                ties = True
                break
        if ties:
            excluded += 1
            continue
        probe[i] = base[i] + h
        fp = objective.value(*with_value(probe), st0)
        probe[i] = base[i] - h
        fm = objective.value(*with_value(probe), st0)
        fd = (fp - fm) / (2 * h)
        a = analytic[i]
        errors.append(abs(a - fd) / max(abs(a), abs(fd), floor))
    errors = np.asarray(errors)
    return FiniteDiffReport(
        float(errors.max()) if errors.size else 0.0,
        int(errors.size),
        excluded,
        int((errors >= tolerance).sum()),
        errors,
    )
