"""Point-cloud and mesh file formats: XYZ, PLY (ascii / binary little-endian), OBJ and SVG."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .tessellation import Mesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_pointcloud(path) -> np.ndarray:
    """Read an ``(M, 2)`` or ``(M, 3)`` cloud from ``.ply`` or whitespace XYZ text."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(3)
    if head == b"ply":
        return _load_ply(path)
    return _load_xyz(path)


def _load_xyz(path: Path) -> np.ndarray:
    rows, width = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.replace(",", " ").split()
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a list of numbers: {line.rstrip()!r}") from None
            if len(vals) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 2 or 3 coordinates, got {len(vals)}")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} coordinates, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no points")
    return np.array(rows, dtype=np.float64)


def _load_ply(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        fmt, elements, lineno = None, [], 0
        while True:
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise ValueError(f"{path}:{lineno}: header ended without end_header")
            tokens = raw.decode("ascii", errors="replace").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                elements.append([tokens[1], int(tokens[2]), []])
            elif tokens[0] == "property":
                if not elements:
                    raise ValueError(f"{path}:{lineno}: property before element")
                if tokens[1] == "list":
                    elements[-1][2].append((tokens[4], "list", tokens[2], tokens[3]))
                else:
                    if tokens[1] not in _PLY_TYPES:
                        raise ValueError(f"{path}:{lineno}: unknown property type {tokens[1]!r}")
                    elements[-1][2].append((tokens[2], tokens[1]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise ValueError(f"{path}: unsupported PLY format {fmt!r}")
        if not elements or elements[0][0] != "vertex":
            raise ValueError(f"{path}: first element must be vertex")
        name, count, props = elements[0]
        if any(p[1] == "list" for p in props):
            raise ValueError(f"{path}: list properties on vertices are not supported")
        names = [p[0] for p in props]
        cols = [c for c in ("x", "y", "z") if c in names]
        if cols not in (["x", "y"], ["x", "y", "z"]):
            raise ValueError(f"{path}: vertex element needs x, y[, z] properties")
        if fmt == "ascii":
            data = []
            for k in range(count):
                raw = fh.readline()
                lineno += 1
                vals = raw.split()
                if len(vals) != len(props):
                    raise ValueError(f"{path}:{lineno}: expected {len(props)} values, got {len(vals)}")
                try:
                    data.append([float(v) for v in vals])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: malformed vertex record") from None
            table = np.array(data, dtype=np.float64).reshape(count, len(props))
            return table[:, [names.index(c) for c in cols]]
        dtype = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in props])
        buf = fh.read(dtype.itemsize * count)
        if len(buf) < dtype.itemsize * count:
            raise ValueError(f"{path}: truncated binary vertex data")
        table = np.frombuffer(buf, dtype=dtype, count=count)
        return np.stack([table[c].astype(np.float64) for c in cols], axis=1)


def save_pointcloud(cloud, path) -> None:
    np.savetxt(path, np.asarray(cloud, dtype=np.float64), fmt="%.17g")


def save_mesh(mesh: Mesh, path, svg: bool | None = None) -> None:
    """OBJ with ``v`` and ``f`` (3D) or ``l`` (2D) records, 1-based; 2D also writes an SVG next to it."""
    path = Path(path)
    lines = []
    for v in mesh.vertices:
        coords = list(v) + ([0.0] if mesh.dim == 2 else [])
        lines.append("v " + " ".join(f"{c:.17g}" for c in coords))
    tag = "l" if mesh.dim == 2 else "f"
    for f in mesh.faces:
        lines.append(tag + " " + " ".join(str(int(i) + 1) for i in f))
    try:
        path.write_text("\n".join(lines) + "\n")
        if mesh.dim == 2 and (svg or svg is None):
            path.with_suffix(".svg").write_text(to_svg(mesh))
    except OSError as exc:
        raise OSError(f"cannot write mesh to {path}: {exc}") from exc


def load_mesh(path) -> Mesh:
    """Read an OBJ written by :func:`save_mesh` (or any OBJ with v/f/l records)."""
    path = Path(path)
    verts, faces, lines = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
                elif parts[0] == "l":
                    idx = [int(p) - 1 for p in parts[1:]]
                    lines.extend([idx[k], idx[k + 1]] for k in range(len(idx) - 1))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed record {line.rstrip()!r}") from None
    if faces and lines:
        raise ValueError(f"{path}: mixes face and line records")
    verts = np.array(verts, dtype=np.float64).reshape(-1, 3)
    if lines:
        return Mesh(verts[:, :2].copy(), np.array(lines, dtype=np.int64), None)
    return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3), None)


def polyline_chains(faces: np.ndarray) -> list[list[int]]:
    """Split 2D segments into vertex chains; closed loops repeat their first vertex."""
    adj = defaultdict(list)
    for k, (a, b) in enumerate(faces):
        adj[int(a)].append((int(b), k))
        adj[int(b)].append((int(a), k))
    used = np.zeros(len(faces), dtype=bool)
    chains = []
    # open chains first, starting from vertices whose degree is not 2
    starts = sorted(v for v, nb in adj.items() if len(nb) != 2) + sorted(adj)
    for s in starts:
        for _ in range(len(adj[s])):
            nxt = [(u, k) for u, k in adj[s] if not used[k]]
            if not nxt:
                break
            chain, v = [s], s
            while True:
                step = [(u, k) for u, k in adj[v] if not used[k]]
                if not step:
                    break
                u, k = step[0]
                used[k] = True
                chain.append(u)
                v = u
                if len(adj[v]) != 2:
                    break
            chains.append(chain)
    return chains


def to_svg(mesh: Mesh, size: int = 512) -> str:
    """Unit-viewBox SVG, one path per chain; closed chains end with ``Z``."""
    v = mesh.vertices
    if len(v):
        lo = v.min(0)
        span = max(float(np.ptp(v, axis=0).max()), 1e-12)
        uv = (v - lo) / span
    else:
        uv = v
    paths = []
    for chain in polyline_chains(mesh.faces):
        closed = len(chain) > 2 and chain[0] == chain[-1]
        pts = chain[:-1] if closed else chain
        d = " ".join(f"{'M' if i == 0 else 'L'} {uv[p, 0]:.9g} {1 - uv[p, 1]:.9g}" for i, p in enumerate(pts))
        paths.append(f'  <path d="{d}{" Z" if closed else ""}" fill="none" stroke="black" stroke-width="0.002"/>')
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 1 1">\n'
            + "\n".join(paths) + "\n</svg>\n")
