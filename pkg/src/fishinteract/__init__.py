"""Pair interaction models for fish swimming in a circular tank.

A burst-and-coast agent model, a recurrent Gaussian acceleration regressor
written on plain numpy, a closed-loop rollout engine and the observable
battery used to compare trajectories.
"""

__version__ = "0.1.0"

from .core import ArenaSpec, AgentState, SystemState, GeometryError, wrap_angle  # noqa: E402
from .trajio import Trajectory, RawTrajectory, Dataset, load_csv, write_csv  # noqa: E402
from .ingest import IngestPipeline  # noqa: E402
from .burst_coast import BurstCoastModel, InteractionParams, KickDistributions  # noqa: E402
from .dli import DLIRegressor, GaussianAccelPrediction  # noqa: E402
from .engine import RolloutConfig, rollout, rollout_pair, rollout_group  # noqa: E402

__all__ = [
    "ArenaSpec", "AgentState", "SystemState", "GeometryError", "wrap_angle",
    "Trajectory", "RawTrajectory", "Dataset", "load_csv", "write_csv",
    "IngestPipeline", "BurstCoastModel", "InteractionParams", "KickDistributions",
    "DLIRegressor", "GaussianAccelPrediction",
    "RolloutConfig", "rollout", "rollout_pair", "rollout_group",
]
