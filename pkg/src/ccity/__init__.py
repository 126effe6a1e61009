"""Deterministic multi-agent traffic scenarios with known causal structure.

The package simulates vehicles on a grid road network, logs their
trajectories together with the ground-truth leader-follower graph, and
ships baselines that recover that graph from the logs and forecast motion
with and without it.
"""

from .agents import CollisionEvent, VehicleState, braking_distance
from .analysis import (
    ConstantVelocityPredictor,
    GraphConditionedPredictor,
    LagEdgeDetector,
    LagScore,
    TrajectorySet,
    discover_edges,
    f1_edges,
    lag_similarity,
    load_split,
    mse_per_horizon,
    predict_cv,
    predict_graph_conditioned,
    threshold_calibrate,
    trajectories_from_log,
)
from .datagen import DatasetParams, generate_dataset, read_manifest, sample_scenario
from .engine import SimLog, read_log, run, write_log
from .graphs import CausalGraph
from .road_network import RoadNetwork, build_grid, default_grid, resolve_route
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    parse_scenario,
    serialize_scenario,
    validate_config,
)
from .signals import SignalSchedule, default_schedule, light_state_at

__version__ = "0.1.0"

__all__ = [
    "CausalGraph",
    "CollisionEvent",
    "ConstantVelocityPredictor",
    "DatasetParams",
    "GraphConditionedPredictor",
    "LagEdgeDetector",
    "LagScore",
    "RoadNetwork",
    "ScenarioConfig",
    "ScenarioError",
    "SignalSchedule",
    "SimLog",
    "TrajectorySet",
    "VehicleState",
    "braking_distance",
    "build_grid",
    "default_grid",
    "default_schedule",
    "discover_edges",
    "f1_edges",
    "generate_dataset",
    "lag_similarity",
    "light_state_at",
    "load_split",
    "mse_per_horizon",
    "parse_scenario",
    "predict_cv",
    "predict_graph_conditioned",
    "read_log",
    "read_manifest",
    "resolve_route",
    "run",
    "sample_scenario",
    "serialize_scenario",
    "threshold_calibrate",
    "trajectories_from_log",
    "validate_config",
    "write_log",
]
