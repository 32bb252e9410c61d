"""Timing of minimum-ball face probabilities against a brute-force signed-distance scan."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .geometry import signed_distances_bruteforce
from .tessellation import knn_faces, signed_distances

LADDER = (1_000, 2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000)
FIELDS = ("N", "dim", "t_minball_ms", "t_bruteforce_ms", "speedup")


@dataclass
class BenchRow:
    N: int
    dim: int
    t_minball_ms: float
    t_bruteforce_ms: float | None

    @property
    def speedup(self) -> float | None:
        if self.t_bruteforce_ms is None or self.t_minball_ms <= 0:
            return None
        return self.t_bruteforce_ms / self.t_minball_ms


def log_ladder(nmin: int, nmax: int) -> list[int]:
    """1-2-5 ladder between the bounds (both included)."""
    out = [n for n in LADDER if nmin <= n <= nmax]
    decade = 10 ** int(np.floor(np.log10(max(nmin, 1))))
    while decade <= nmax:
        for m in (1, 2, 5):
            n = m * decade
            if nmin <= n <= nmax:
                out.append(n)
        decade *= 10
    return sorted(set(out) | {nmin, nmax})


def query_problem(n: int, dim: int, seed: int = 0, knn_k: int = 10):
    """``n`` uniform points in the unit cube and ``n`` faces drawn from their 10-NN combinations."""
    rng = np.random.default_rng(seed)
    positions = rng.random((n, dim))
    combos = knn_faces(positions, np.arange(n), knn_k)
    pick = rng.choice(len(combos), size=n, replace=len(combos) < n)
    return positions, combos[np.sort(pick)]


def minball_probability(positions: np.ndarray, faces: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """The fast path: KD-tree build, nearest outside point per ball, sigmoid."""
    d = signed_distances(positions, faces)[0]
    return expit(alpha * d)


def bruteforce_probability(positions: np.ndarray, faces: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return expit(alpha * signed_distances_bruteforce(positions, faces))


def _timed(fn, *args, trials: int) -> float:
    total = 0.0
    for _ in range(trials):
        t0 = time.perf_counter()
        fn(*args)
        total += time.perf_counter() - t0
    return 1e3 * total / trials


def run(nmin: int = 1_000, nmax: int = 200_000, trials: int = 5, dims=(2, 3), bruteforce_max: int = 50_000,
        seed: int = 0, progress=None) -> list[BenchRow]:
    rows = []
    for dim in dims:
        for n in log_ladder(nmin, nmax):
            positions, faces = query_problem(n, dim, seed)
            t_mb = _timed(minball_probability, positions, faces, trials=trials)
            t_bf = _timed(bruteforce_probability, positions, faces, trials=trials) if n <= bruteforce_max else None
            row = BenchRow(n, dim, t_mb, t_bf)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in rows:
        w.writerow([r.N, r.dim, f"{r.t_minball_ms:.4f}",
                    "" if r.t_bruteforce_ms is None else f"{r.t_bruteforce_ms:.4f}",
                    "" if r.speedup is None else f"{r.speedup:.3f}"])
    return buf.getvalue()


def check_agreement(n: int = 2_000, dim: int = 2, seed: int = 0) -> float:
    """Largest difference between the two paths' signed distances (should be ~1e-15)."""
    positions, faces = query_problem(n, dim, seed)
    a = signed_distances(positions, faces)[0]
    b = signed_distances_bruteforce(positions, faces)
    finite = np.isfinite(a) & np.isfinite(b)
    if not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return float("inf")
    return float(np.abs(a[finite] - b[finite]).max()) if finite.any() else 0.0

