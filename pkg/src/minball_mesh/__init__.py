"""Differentiable mesh connectivity from points through minimum bounding balls."""

from .config import ReconConfig, ReinforceConfig, RunConfig, recon_defaults
from .geometry import MinBall, PointSet, SigmoidSchedule, alpha_min, d_common, min_ball_2d, min_ball_3d
from .tessellation import Mesh, delaunay_oracle, extract_mesh, face_probability, generate_query_faces

__version__ = "0.1.0"

__all__ = [
    "Mesh", "MinBall", "PointSet", "ReconConfig", "ReinforceConfig", "RunConfig", "SigmoidSchedule",
    "alpha_min", "d_common", "delaunay_oracle", "extract_mesh", "face_probability", "generate_query_faces",
    "min_ball_2d", "min_ball_3d", "recon_defaults",
]
