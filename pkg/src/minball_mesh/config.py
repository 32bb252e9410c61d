"""Run configuration: dataclasses, per-mode defaults and the flat JSON file format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ReconConfig:
    dim: int = 2
    init: str = "grid"  # "grid" | "pointcloud"
    epochs: int = 1
    steps_real_init: int = 100
    steps_position: int = 500
    steps_real: int = 0
    cache_refresh: int = 50
    cache_K: int = 10
    chamfer_margin: int = 8  # extra Chamfer candidates kept between refreshes; 0 = exact every step
    knn_k: int = 10
    lr_position: float = 0.001
    lr_psi: float = 0.3
    grid_edge: float | None = None  # None: derived from the input cloud
    grid_cells: int = 64  # auto grid edge = longest bbox side / grid_cells
    density_factor: float = 3.0
    lambda_qual: float = 0.0
    lambda_real: float = 1e-4
    samples_per_face: int = 1
    k_cd: int = 8
    snap_threshold: float = 0.01
    query_min_lambda: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.init not in ("grid", "pointcloud"):
            raise ValueError(f"unknown init {self.init!r}")
        counts = (self.epochs, self.steps_real_init, self.steps_position, self.steps_real)
        if min(counts) < 0:
            raise ValueError("step counts must be non-negative")
        if self.chamfer_margin < 0:
            raise ValueError("chamfer_margin must be non-negative")
        if self.cache_refresh < 1 or self.cache_K < 1 or self.knn_k < 1:
            raise ValueError("cache_refresh, cache_K and knn_k must be positive")
        if self.lr_position <= 0 or self.lr_psi <= 0:
            raise ValueError("learning rates must be positive")
        if self.grid_edge is not None and self.grid_edge <= 0:
            raise ValueError("grid_edge must be positive")


@dataclass
class ReinforceConfig:
    n0: int = 10
    n1: int = 2000
    batch: int = 1024
    eps_card: float = 1e-5
    lr_phi: float = 0.01
    phi_init: float = 0.99
    prune_threshold: float = 0.5
    sample_spacing: float | None = None


MODE_DEFAULTS = {
    "2d-pc": dict(dim=2, init="grid", epochs=1, steps_real_init=100, steps_position=500, steps_real=0,
                  lr_psi=0.3, lr_position=0.001),
    "3d-pc": dict(dim=3, init="pointcloud", epochs=1, steps_real_init=0, steps_position=2000, steps_real=0,
                  lr_position=0.001, density_factor=3.0, query_min_lambda=1e-6, samples_per_face=1),
}


def recon_defaults(mode: str) -> ReconConfig:
    if mode not in MODE_DEFAULTS:
        raise ValueError(f"unknown mode {mode!r}; expected one of {sorted(MODE_DEFAULTS)}")
    return ReconConfig(**MODE_DEFAULTS[mode])


@dataclass
class RunConfig:
    """Everything a CLI command needs, serialised as one flat JSON object."""

    mode: str = "2d-pc"
    input: str | None = None
    out_dir: str = "out"
    recon: ReconConfig = field(default_factory=ReconConfig)
    reinforce: ReinforceConfig = field(default_factory=ReinforceConfig)

    @property
    def seed(self) -> int:
        return self.recon.seed

    def to_flat(self) -> dict:
        flat = {"mode": self.mode, "input": self.input, "out_dir": self.out_dir}
        flat.update(dataclasses.asdict(self.recon))
        flat.update({f"rl_{k}": v for k, v in dataclasses.asdict(self.reinforce).items()})
        return flat

    @classmethod
    def from_flat(cls, flat: dict, mode: str | None = None) -> "RunConfig":
        flat = dict(flat)
        mode = mode or flat.get("mode") or "2d-pc"
        recon_keys = {f.name for f in dataclasses.fields(ReconConfig)}
        rl_keys = {f"rl_{f.name}" for f in dataclasses.fields(ReinforceConfig)}
        known = recon_keys | rl_keys | {"mode", "input", "out_dir"}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        recon = dict(MODE_DEFAULTS[mode]) if mode in MODE_DEFAULTS else {}
        if mode not in MODE_DEFAULTS:
            raise ValueError(f"unknown mode {mode!r}")
        recon.update({k: v for k, v in flat.items() if k in recon_keys})
        rl = {k[3:]: v for k, v in flat.items() if k in rl_keys}
        return cls(
            mode=mode,
            input=flat.get("input"),
            out_dir=flat.get("out_dir") or "out",
            recon=ReconConfig(**recon),
            reinforce=ReinforceConfig(**rl),
        )

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, mode: str | None = None) -> "RunConfig":
        return cls.from_flat(json.loads(Path(path).read_text()), mode)
