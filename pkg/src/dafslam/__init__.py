"""Batch landmark SLAM with unknown data association.

Estimates a robot trajectory, landmark positions, measurement-to-landmark
associations, and the number of landmarks from odometry plus anonymous
positional landmark measurements.
"""

from .baselines import (
    AssociationHypothesis,
    MlConfig,
    first_observation_init,
    hungarian,
    mahalanobis_gate,
    ml_solve,
    odom_trajectory,
    oracle_solve,
)
from .clustering import ClusterResult, kmeans_pp_init, lloyd
from .datasets import (
    Dataset,
    DatasetConfig,
    generate_grid,
    load_dataset,
    make_semireal,
    reference_solution,
    save_dataset,
)
from .evaluation import EvalReport, ate, landmark_count_delta, objective_curve
from .factor_graph import (
    Estimate,
    FactorGraph,
    GraphStructureError,
    LandmarkFactor,
    LmConfig,
    Measurements,
    OdometryFactor,
    PriorFactor,
    SolveResult,
    build_slam_graph,
    f_slam,
    optimize_lm,
    residual_and_jacobian,
)
from .g2o_io import PoseGraph, PoseGraphEdge, load_g2o, save_g2o
from .geometry import (
    Pose,
    Tangent,
    compose,
    inverse,
    predict_measurement,
    project_to_world,
    retract,
)
from .kslam import (
    KslamConfig,
    beta_heuristic,
    chi2_quantile,
    inner_solve,
    outer_solve,
    uniform_div,
)

__version__ = "0.1.0"

__all__ = [
    "AssociationHypothesis", "ClusterResult", "Dataset", "DatasetConfig",
    "Estimate", "EvalReport", "FactorGraph", "GraphStructureError",
    "KslamConfig", "LandmarkFactor", "LmConfig", "Measurements", "MlConfig",
    "OdometryFactor", "Pose", "PoseGraph", "PoseGraphEdge", "PriorFactor",
    "SolveResult", "Tangent", "ate", "beta_heuristic", "build_slam_graph",
    "chi2_quantile", "compose", "f_slam", "first_observation_init",
    "generate_grid", "hungarian", "inner_solve", "inverse", "kmeans_pp_init",
    "landmark_count_delta", "lloyd", "load_dataset", "load_g2o",
    "mahalanobis_gate", "make_semireal", "ml_solve", "objective_curve",
    "odom_trajectory", "optimize_lm", "oracle_solve", "outer_solve",
    "predict_measurement", "project_to_world", "reference_solution",
    "residual_and_jacobian", "retract", "save_dataset", "save_g2o",
    "uniform_div",
]
