"""Point-cloud reconstruction: initialisation, the three optimisation steps and subdivision."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from .config import ReconConfig
from .geometry import PointSet, SigmoidSchedule, alpha1_for_grid, alpha_min, min_balls
from .losses import LossWeights, Objective, barycentric_pattern
from .spatial import SpatialIndex, build_cache
from .tessellation import Mesh, extract_mesh, generate_query_faces, signed_distances, unique_faces

log = logging.getLogger(__name__)


# -- initialisation --------------------------------------------------------


def _bounds(dim: int, bounds) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (dim,)).copy()
    return lo, hi


def init_grid(dim: int, edge: float, bounds=((0.0,) * 3, (1.0,) * 3), psi: float = 0.5):
    """Regular grid whose faces all satisfy the empty-minimum-ball condition.

    2D: equilateral triangular lattice, faces are the lattice edges.
    3D: body-centred cubic lattice; faces are the triangles of its standard
    tetrahedral decomposition (isosceles, long side ``edge``).
    Returns ``(PointSet, faces)``.
    """
    if edge <= 0:
        raise ValueError("edge must be positive")
    lo, hi = _bounds(dim, bounds)
    if dim == 2:
        return _tri_grid(edge, lo, hi, psi)
    if dim == 3:
        return _bcc_grid(edge, lo, hi, psi)
    raise ValueError(f"unsupported dimension {dim}")


def _tri_grid(edge, lo, hi, psi):
    h = edge * math.sqrt(3.0) / 2.0
    ncols = int(math.floor((hi[0] - lo[0]) / edge + 1e-9)) + 1
    nrows = int(math.floor((hi[1] - lo[1]) / h + 1e-9)) + 1
    if ncols < 2 or nrows < 2:
        raise ValueError("bounds too small for a single grid cell")
    ids = {}
    pts = []
    for j in range(nrows):
        shift = edge / 2.0 if j % 2 else 0.0
        for i in range(ncols):
            x = lo[0] + i * edge + shift
            if x > hi[0] + 1e-9 * edge:
                continue
            ids[i, j] = len(pts)
            pts.append((x, lo[1] + j * h))
    faces = []
    for (i, j), a in ids.items():
        nbrs = [(i + 1, j)]
        nbrs += [(i - 1, j + 1), (i, j + 1)] if j % 2 == 0 else [(i, j + 1), (i + 1, j + 1)]
        faces.extend((a, ids[n]) for n in nbrs if n in ids)
    positions = np.array(pts)
    faces = np.sort(np.array(faces, dtype=np.int64), axis=1)
    return PointSet(positions, np.full(len(positions), psi)), faces


_CUBE_EDGES = [
    ((0, 0, 0), (1, 0, 0)), ((0, 1, 0), (1, 1, 0)), ((0, 0, 1), (1, 0, 1)), ((0, 1, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 1, 0)), ((1, 0, 0), (1, 1, 0)), ((0, 0, 1), (0, 1, 1)), ((1, 0, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1)), ((1, 0, 0), (1, 0, 1)), ((0, 1, 0), (0, 1, 1)), ((1, 1, 0), (1, 1, 1)),
]


def _bcc_grid(edge, lo, hi, psi):
    n = np.floor((hi - lo) / edge + 1e-9).astype(int)
    if np.any(n < 1):
        raise ValueError("bounds too small for a single grid cell")
    nx, ny, nz = n
    corner = lambda i, j, k: (i * (ny + 1) + j) * (nz + 1) + k  # noqa: E731
    ncorner = (nx + 1) * (ny + 1) * (nz + 1)
    center = lambda i, j, k: ncorner + (i * ny + j) * nz + k  # noqa: E731
    gi, gj, gk = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    corners = np.stack([gi, gj, gk], -1).reshape(-1, 3) * edge + lo
    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    cells = np.stack([ci, cj, ck], -1).reshape(-1, 3)
    centers = (cells + 0.5) * edge + lo
    faces = []
    for i, j, k in cells:
        c = center(i, j, k)
        for a, b in _CUBE_EDGES:
            faces.append((c, corner(i + a[0], j + a[1], k + a[2]), corner(i + b[0], j + b[1], k + b[2])))
        for axis in range(3):
            nb = [i, j, k]
            nb[axis] += 1
            if nb[axis] >= n[axis]:
                continue
            c2 = center(*nb)
            # corners of the shared square face
            others = [ax for ax in range(3) if ax != axis]
            for da in (0, 1):
                for db in (0, 1):
                    v = [i, j, k]
                    v[axis] += 1
                    v[others[0]] += da
                    v[others[1]] += db
                    faces.append((c, c2, corner(*v)))
    positions = np.concatenate([corners, centers])
    faces = np.sort(np.array(faces, dtype=np.int64), axis=1)
    return PointSet(positions, np.full(len(positions), psi)), faces


# outer radius of the psi=0 support shell, in grid spacings
SHELL_LAYERS = 3.0


def point_density(cloud: np.ndarray) -> float:
    """Mean distance from each (distinct) point to its nearest neighbour."""
    unique = np.unique(np.asarray(cloud, dtype=np.float64), axis=0)
    if len(unique) < 2:
        raise ValueError("point cloud is degenerate (all points coincide)")
    d, _ = cKDTree(unique).query(unique, k=2)
    return float(d[:, 1].mean())


def voxel_downsample(cloud: np.ndarray, cell: float) -> np.ndarray:
    """One representative per occupied voxel: the input point closest to the voxel's mean."""
    cloud = np.asarray(cloud, dtype=np.float64)
    keys = np.floor((cloud - cloud.min(0)) / cell).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    nvox = inverse.max() + 1
    sums = np.zeros((nvox, cloud.shape[1]))
    np.add.at(sums, inverse, cloud)
    means = sums / np.bincount(inverse, minlength=nvox)[:, None]
    dist = np.linalg.norm(cloud - means[inverse], axis=1)
    order = np.lexsort((np.arange(len(cloud)), dist, inverse))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order[1:]] != inverse[order[:-1]]
    chosen = np.sort(order[first])
    return cloud[chosen]


def init_from_pointcloud(cloud, dim: int | None = None, density_factor: float = 3.0,
                         shell_layers: float = SHELL_LAYERS):
    """Downsampled cloud as psi=1 points inside a psi=0 support shell.

    The shell is the part of a grid (spacing ``density_factor`` x density)
    lying between one and ``shell_layers`` spacings from the cloud; nearer
    grid points would sit inside surface balls, farther ones never matter.
    Returns ``(PointSet, density)``.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    dim = dim or cloud.shape[1]
    if len(cloud) < dim + 1:
        raise ValueError(f"need at least {dim + 1} points")
    density = point_density(cloud)
    surface = voxel_downsample(cloud, density)
    spacing = density_factor * density
    lo = cloud.min(0) - 2 * spacing
    hi = cloud.max(0) + 2 * spacing
    axes = [np.arange(lo[d], hi[d] + 0.5 * spacing, spacing) for d in range(dim)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim)
    near, _ = cKDTree(cloud).query(grid, distance_upper_bound=shell_layers * spacing)
    support = grid[np.isfinite(near) & (near > spacing)]
    positions = np.concatenate([surface, support])
    psi = np.concatenate([np.ones(len(surface)), np.zeros(len(support))])
    return PointSet(positions, psi), density


# -- optimiser -------------------------------------------------------------


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None or self.m.shape != param.shape:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
            self.t = 0
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return param - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class OptimState:
    points: PointSet
    schedule: SigmoidSchedule
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def alpha(self) -> float:
        return alpha_min(self.schedule)

    @property
    def epoch(self) -> int:
        return self.schedule.epoch


def _weights(config: ReconConfig, qual: bool = True) -> LossWeights:
    return LossWeights(config.lambda_qual if qual else 0.0, config.lambda_real)


def _optimize_psi(points: PointSet, faces, lmin, target, config, steps, record, stage) -> PointSet:
    obj = Objective(faces, target, 1.0, _weights(config, qual=False), config.samples_per_face, config.k_cd,
                    fixed_lambda_min=lmin)
    psi = points.psi.copy()
    adam = Adam(config.lr_psi)
    # positions are frozen, so the structure only depends on psi through argmin
    for i in range(steps):
        total, _, g, parts = obj.gradients(points.positions, psi)
        psi = np.clip(adam.step(psi, g), 0.0, 1.0)
        record(stage, i, total, parts, len(faces))
    snapped = np.where(psi > config.snap_threshold, 1.0, 0.0)
    return PointSet(points.positions, snapped)


def optimize_real_init(state: OptimState, faces, target, config: ReconConfig, record=None) -> PointSet:
    """Step 1: grid faces with minimum-ball probability fixed at 1, optimise psi, then snap."""
    record = record or _noop
    lmin = np.ones(len(faces))
    state.points = _optimize_psi(state.points, faces, lmin, target, config, config.steps_real_init, record, "real_init")
    return state.points


def optimize_real(state: OptimState, target, config: ReconConfig, record=None) -> PointSet:
    """Step 3: exact minimum-ball faces among active points, probabilities frozen, optimise psi."""
    if config.steps_real == 0:
        return state.points
    record = record or _noop
    pts = state.points
    faces = generate_query_faces(pts, config.knn_k, exact=True)
    d = signed_distances(pts.positions, faces)[0]
    keep = d > 0
    faces, d = faces[keep], d[keep]
    if len(faces) == 0:
        return pts
    lmin = expit(d * state.alpha)
    state.points = _optimize_psi(pts, faces, lmin, target, config, config.steps_real, record, "real")
    return state.points


def _query_setup(pts: PointSet, config: ReconConfig, alpha: float, step: int):
    faces = generate_query_faces(pts, config.knn_k)
    if len(faces) == 0:
        raise RuntimeError("query-face set became empty")
    index = SpatialIndex(pts.positions)
    d, _, centers, _, _ = signed_distances(pts.positions, faces, index)
    if config.query_min_lambda > 0:
        keep = expit(d * alpha) >= config.query_min_lambda
        if not keep.any():
            raise RuntimeError("no query face above query_min_lambda")
        faces, centers = faces[keep], centers[keep]
    return faces, build_cache(index, faces, centers, config.cache_K, step)


def optimize_positions(state: OptimState, target, config: ReconConfig, record=None) -> PointSet:
    """Step 2: psi frozen, positions follow the loss through cached minimum-ball probabilities."""
    record = record or _noop
    pts = state.points
    positions = pts.positions.copy()
    adam = Adam(config.lr_position)
    alpha = state.alpha
    obj = None
    for i in range(config.steps_position):
        if i % config.cache_refresh == 0:
            faces, cache = _query_setup(PointSet(positions, pts.psi), config, alpha, state.step)
            obj = Objective(faces, target, alpha, _weights(config), config.samples_per_face, config.k_cd, lookup=cache,
                            chamfer_margin=config.chamfer_margin)
        total, g, _, parts = obj.gradients(positions, pts.psi)
        positions = adam.step(positions, g)
        state.step += 1
        record("position", i, total, parts, len(obj.faces))
    state.points = PointSet(positions, pts.psi)
    return state.points


# -- subdivision -----------------------------------------------------------


def mesh_edges(faces: np.ndarray) -> np.ndarray:
    faces = np.asarray(faces, dtype=np.int64)
    if faces.shape[1] == 2:
        return np.sort(faces, axis=1)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def find_blockers(points: PointSet, mesh: Mesh, target, samples_per_face: int = 4, k: int = 16) -> np.ndarray:
    """Extracted faces whose removal alone lowers the hard-mesh Chamfer loss.

    Exact single-face masked re-evaluation: only targets whose nearest sample
    sits on the face change their forward term, and the reverse term is a
    mean over samples.
    """
    target = np.asarray(target, dtype=np.float64)
    faces = mesh.point_ids[mesh.faces] if len(mesh.faces) else np.empty((0, points.dim), dtype=np.int64)
    if len(faces) < 2:
        return np.empty((0, points.dim), dtype=np.int64)
    bary = barycentric_pattern(points.dim, samples_per_face)
    samples = np.einsum("sj,fjd->fsd", bary, points.positions[faces]).reshape(-1, points.dim)
    owner = np.repeat(np.arange(len(faces)), len(bary))
    kk = min(k, len(samples))
    d, i = cKDTree(samples).query(target, k=kk)
    d = d.reshape(len(target), kk)
    i = i.reshape(len(target), kk)
    own = owner[i]
    other = own != own[:, :1]
    has_other = other.any(1)
    d2 = np.where(has_other, d[np.arange(len(target)), np.argmax(other, 1)], np.inf)
    gain = np.zeros(len(faces))
    np.add.at(gain, own[:, 0], (d2 - d[:, 0]) / len(target))
    rs, _ = cKDTree(target).query(samples)
    s_total, m_total = rs.sum(), len(samples)
    s_face = np.bincount(owner, rs, minlength=len(faces))
    m_face = len(bary)
    delta_rev = (s_total - s_face) / (m_total - m_face) - s_total / m_total
    delta = gain + delta_rev
    return faces[delta < 0]


def subdivide(state: OptimState, mesh: Mesh, blockers=None):
    """Insert psi=1 midpoints on mesh edges and psi=0 points at blocker ball centers.

    Returns ``(PointSet, sub_faces)`` where ``sub_faces`` index the new point
    set and are the pieces each original face splits into. The sigmoid
    schedule advances one epoch.
    """
    pts = state.points
    dim = pts.dim
    if len(mesh.faces) == 0:
        state.schedule.advance()
        return pts, np.empty((0, dim), dtype=np.int64)
    faces = mesh.point_ids[mesh.faces]
    edges = mesh_edges(faces)
    mids = 0.5 * (pts.positions[edges[:, 0]] + pts.positions[edges[:, 1]])
    n0 = len(pts)
    mid_id = {tuple(e): n0 + k for k, e in enumerate(edges)}
    new_pos = [pts.positions, mids]
    new_psi = [pts.psi, np.ones(len(mids))]
    if blockers is not None and len(blockers):
        centers, _, degenerate = min_balls(pts.positions, np.asarray(blockers))
        new_pos.append(centers[~degenerate])
        new_psi.append(np.zeros(int((~degenerate).sum())))
    if dim == 2:
        m = np.array([mid_id[tuple(f)] for f in np.sort(faces, axis=1)])
        sub = np.concatenate([np.stack([faces[:, 0], m], 1), np.stack([m, faces[:, 1]], 1)])
    else:
        f = np.sort(faces, axis=1)
        ab = np.array([mid_id[(a, b)] for a, b in f[:, [0, 1]]])
        bc = np.array([mid_id[(a, b)] for a, b in f[:, [1, 2]]])
        ac = np.array([mid_id[(a, b)] for a, b in f[:, [0, 2]]])
        sub = np.concatenate([
            np.stack([f[:, 0], ab, ac], 1),
            np.stack([f[:, 1], ab, bc], 1),
            np.stack([f[:, 2], ac, bc], 1),
            np.stack([ab, bc, ac], 1),
        ])
    state.points = PointSet(np.concatenate(new_pos), np.concatenate(new_psi))
    state.schedule.advance()
    return state.points, unique_faces(sub, len(state.points))


# -- driver ----------------------------------------------------------------


def _noop(*args, **kwargs):
    pass


@dataclass
class ReconResult:
    mesh: Mesh
    points: PointSet
    history: list
    snapshots: dict
    alpha1: float
    grid_edge: float
    runtime_seconds: float


def auto_grid_edge(cloud: np.ndarray, config: ReconConfig) -> float:
    if config.grid_edge is not None:
        return config.grid_edge
    if config.init == "pointcloud":
        return config.density_factor * point_density(cloud)
    return float(np.ptp(cloud, axis=0).max()) / config.grid_cells


def reconstruct(cloud, config: ReconConfig, on_snapshot: Callable[[str, Mesh], None] | None = None) -> ReconResult:
    """Initialisation, then ``epochs`` rounds of position/real optimisation and subdivision."""
    t0 = time.perf_counter()
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != config.dim:
        raise ValueError(f"expected an (M, {config.dim}) point cloud")
    history: list[dict] = []
    snapshots: dict[str, Mesh] = {}

    def record(stage, i, total, parts, nfaces):
        if i % 10 == 0:
            history.append({"stage": stage, "step": i, "loss": total, "L_recon": parts["recon"],
                            "L_qual": parts["qual"], "L_real": parts["real"], "faces": nfaces})

    def snap(name, pts):
        mesh = extract_mesh(pts, 0.5, knn_k=config.knn_k)
        snapshots[name] = mesh
        if on_snapshot is not None:
            on_snapshot(name, mesh)

    edge = auto_grid_edge(cloud, config)
    if config.init == "grid":
        lo = cloud.min(0) - 2 * edge
        hi = cloud.max(0) + 2 * edge
        points, grid_faces = init_grid(config.dim, edge, (lo, hi))
        state = OptimState(points, SigmoidSchedule(alpha1_for_grid(config.dim, edge)))
        optimize_real_init(state, grid_faces, cloud, config, record)
        snap("step1_real_init", state.points)
    else:
        points, _ = init_from_pointcloud(cloud, config.dim, config.density_factor)
        state = OptimState(points, SigmoidSchedule(alpha1_for_grid(config.dim, edge)))
        snap("step1_init", state.points)

    for epoch in range(1, config.epochs + 1):
        optimize_positions(state, cloud, config, record)
        snap(f"epoch{epoch}_step2_position", state.points)
        optimize_real(state, cloud, config, record)
        snap(f"epoch{epoch}_step3_real", state.points)
        if epoch < config.epochs:
            mesh = extract_mesh(state.points, 0.5, knn_k=config.knn_k)
            blockers = find_blockers(state.points, mesh, cloud)
            subdivide(state, mesh, blockers)
            snap(f"epoch{epoch}_step4_subdivide", state.points)

    mesh = extract_mesh(state.points, 0.5, knn_k=config.knn_k)
    return ReconResult(mesh, state.points, history, snapshots, state.schedule.alpha1, edge,
                       time.perf_counter() - t0)
