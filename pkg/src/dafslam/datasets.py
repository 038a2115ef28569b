"""Dataset generation: synthetic grid worlds and semi-real pose-graph hybrids.

A grid dataset walks a snake path over a 2D or 3D lattice, drops landmarks
uniformly in the (inflated) trajectory bounding box, lets each landmark be
observed by its closest poses, and corrupts odometry and measurements with
Gaussian noise. A semi-real dataset takes a real pose graph, optimizes it
with loop closures to get a proxy ground-truth trajectory, strips the loop
closures, and injects synthetic landmarks the same way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .baselines import first_observation_init
from .factor_graph import (
    Estimate,
    FactorGraph,
    Measurements,
    OdometryFactor,
    PriorFactor,
    PRIOR_INFO_DIAG,
    SolveResult,
    build_slam_graph,
    compose_chain,
    diag_info_sqrt,
    optimize_lm,
)
from .geometry import (
    Pose,
    compose,
    inverse,
    pose_dof,
    quat_to_rotmat,
    retract,
    rot2,
    rotmat_to_quat,
    so_log,
)
from .g2o_io import PoseGraph

DATASET_FORMAT_VERSION = 1


@dataclass
class DatasetConfig:
    """Generation parameters; the defaults are the standard 2D grid setup."""

    dim: int = 2
    grid_shape: tuple = (20, 25)
    n_landmarks: int = 100
    obs_per_landmark: int = 10
    odom_trans_std: float = 0.05
    odom_rot_std: float = 0.005
    lm_std: float = 0.05
    cell_spacing: float = 1.0
    landmark_box_inflation: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if len(self.grid_shape) != self.dim:
            raise ValueError("grid_shape must have one extent per dimension")
        if min(self.odom_trans_std, self.odom_rot_std, self.lm_std) < 0:
            raise ValueError("noise stds must be non-negative")
        if self.n_landmarks < 1 or self.obs_per_landmark < 1:
            raise ValueError("need at least one landmark and one observation")

    @property
    def n_poses(self) -> int:
        return int(np.prod(self.grid_shape))

    @staticmethod
    def grid_2d() -> "DatasetConfig":
        return DatasetConfig()

    @staticmethod
    def grid_3d() -> "DatasetConfig":
        return DatasetConfig(dim=3, grid_shape=(6, 6, 6), n_landmarks=43)

    @staticmethod
    def intel() -> "DatasetConfig":
        # Landmark-injection parameters for the Intel pose graph (942 poses).
        return DatasetConfig(dim=2, grid_shape=(1, 942), n_landmarks=94,
                             obs_per_landmark=20, odom_trans_std=0.045,
                             odom_rot_std=0.014)

    @staticmethod
    def garage() -> "DatasetConfig":
        return DatasetConfig(dim=3, grid_shape=(1, 1, 1661), n_landmarks=166,
                             obs_per_landmark=20, odom_trans_std=1.0,
                             odom_rot_std=0.1)


@dataclass
class Dataset:
    dim: int
    odometry: list
    measurements: Measurements
    sigma: float
    gt_trajectory: list
    gt_landmarks: np.ndarray   # (d, K)
    gt_associations: np.ndarray

    @property
    def n_poses(self) -> int:
        return len(self.gt_trajectory)

    @property
    def m(self) -> int:
        return len(self.measurements)

    @property
    def k_true(self) -> int:
        return self.gt_landmarks.shape[1]


def snake_positions(shape, spacing: float) -> np.ndarray:
    """Boustrophedon lattice walk; consecutive cells are lattice neighbors."""
    d = len(shape)
    coords = []
    if d == 2:
        ny, nx = shape
        x_dir = 1
        for y in range(ny):
            xs = range(nx) if x_dir == 1 else range(nx - 1, -1, -1)
            coords.extend((x, y) for x in xs)
            x_dir = -x_dir
    else:
        nz, ny, nx = shape
        x_dir = 1
        for z in range(nz):
            ys = range(ny) if z % 2 == 0 else range(ny - 1, -1, -1)
            for y in ys:
                xs = range(nx) if x_dir == 1 else range(nx - 1, -1, -1)
                coords.extend((x, y, z) for x in xs)
                x_dir = -x_dir
    return np.asarray(coords, dtype=float) * spacing


def _heading_rotation(direction: np.ndarray) -> np.ndarray:
    d = direction.shape[0]
    u = direction / np.linalg.norm(direction)
    if d == 2:
        return rot2(float(np.arctan2(u[1], u[0])))
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    left = np.cross(ref, u)
    left /= np.linalg.norm(left)
    up = np.cross(u, left)
    return np.column_stack([u, left, up])


def _trajectory_from_positions(positions: np.ndarray) -> list:
    n = positions.shape[0]
    poses = []
    for i in range(n):
        nxt = positions[i + 1] if i + 1 < n else None
        if nxt is not None and np.linalg.norm(nxt - positions[i]) > 0:
            R = _heading_rotation(nxt - positions[i])
        else:
            R = poses[-1].rotation.copy() if poses else np.eye(positions.shape[1])
        poses.append(Pose(R, positions[i].copy()))
    return poses


def _sample_landmarks(positions: np.ndarray, config: DatasetConfig,
                      rng: np.random.Generator) -> np.ndarray:
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    pad = config.landmark_box_inflation * (hi - lo)
    return rng.uniform(lo - pad, hi + pad, size=(config.n_landmarks, config.dim)).T


def _observation_schedule(trajectory, landmarks: np.ndarray, obs: int):
    """(pose, landmark) pairs: each landmark seen by its `obs` nearest poses."""
    positions = np.stack([p.translation for p in trajectory])
    pairs = []
    for j in range(landmarks.shape[1]):
        dists = np.linalg.norm(positions - landmarks[:, j], axis=1)
        for i in np.argsort(dists)[:obs]:
            pairs.append((int(i), j))
    pairs.sort()
    return pairs


def _inject_landmarks(trajectory, config: DatasetConfig, rng: np.random.Generator):
    landmarks = _sample_landmarks(
        np.stack([p.translation for p in trajectory]), config, rng)
    pairs = _observation_schedule(trajectory, landmarks, config.obs_per_landmark)
    pose_idx = np.array([i for i, _ in pairs], dtype=int)
    assoc = np.array([j for _, j in pairs], dtype=int)
    values = np.empty((len(pairs), config.dim))
    for row, (i, j) in enumerate(pairs):
        p = trajectory[i]
        exact = p.rotation.T @ (landmarks[:, j] - p.translation)
        values[row] = exact + rng.normal(scale=config.lm_std, size=config.dim)
    return landmarks, Measurements(pose_idx, values), assoc


def _noisy_odometry(trajectory, config: DatasetConfig, rng: np.random.Generator):
    d = config.dim
    info = diag_info_sqrt(config.odom_trans_std, config.odom_rot_std, d)
    factors = []
    for i in range(len(trajectory) - 1):
        rel = compose(inverse(trajectory[i]), trajectory[i + 1])
        noise = np.concatenate([
            rng.normal(scale=config.odom_trans_std, size=d),
            rng.normal(scale=config.odom_rot_std, size=pose_dof(d) - d),
        ])
        factors.append(OdometryFactor(i, i + 1, retract(rel, noise), info))
    return factors


def generate_grid(config: DatasetConfig, rng: np.random.Generator | None = None) -> Dataset:
    """Synthetic grid-world dataset per the configured parameters."""
    if config.obs_per_landmark > config.n_poses:
        raise ValueError("obs_per_landmark cannot exceed the number of poses")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    trajectory = _trajectory_from_positions(
        snake_positions(config.grid_shape, config.cell_spacing))
    landmarks, measurements, assoc = _inject_landmarks(trajectory, config, rng)
    odometry = _noisy_odometry(trajectory, config, rng)
    return Dataset(
        dim=config.dim,
        odometry=odometry,
        measurements=measurements,
        sigma=config.lm_std,
        gt_trajectory=trajectory,
        gt_landmarks=landmarks,
        gt_associations=assoc,
    )


def _edge_info_sqrt(information: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(information).T
    except np.linalg.LinAlgError:
        # PSD-but-singular information (warned at parse time): symmetric sqrt.
        w, V = np.linalg.eigh(information)
        return np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T


def proxy_trajectory(graph: PoseGraph) -> list:
    """Optimize the full pose graph (loop closures included), gauge at pose 0."""
    factors = [
        OdometryFactor(e.i, e.j, e.rel_pose.copy(), _edge_info_sqrt(e.information))
        for e in graph.edges
    ]
    d = graph.dim
    fg = FactorGraph(graph.n_vertices, 0,
                     [PriorFactor(0, graph.poses[0].copy(),
                                  PRIOR_INFO_DIAG * np.eye(pose_dof(d)))],
                     factors, [])
    init = Estimate([p.copy() for p in graph.poses], np.zeros((d, 0)))
    res = optimize_lm(fg, init)
    origin = inverse(res.trajectory[0])
    return [compose(origin, p) for p in res.trajectory]


def make_semireal(graph: PoseGraph, config: DatasetConfig,
                  rng: np.random.Generator | None = None) -> Dataset:
    """Semi-real dataset: real odometry chain, synthetic landmarks.

    The proxy ground-truth trajectory comes from optimizing the full graph
    with its loop closures; the published dataset keeps only the chain
    odometry edges, so landmark measurements are the sole loop-closing
    information.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    chain = {(e.i, e.j): e for e in graph.chain_edges}
    for i in range(graph.n_vertices - 1):
        if (i, i + 1) not in chain:
            raise ValueError(f"broken odometry chain: no edge ({i}, {i + 1})")
    proxy = proxy_trajectory(graph)
    landmarks, measurements, assoc = _inject_landmarks(proxy, config, rng)
    odometry = [
        OdometryFactor(i, i + 1, chain[(i, i + 1)].rel_pose.copy(),
                       _edge_info_sqrt(chain[(i, i + 1)].information))
        for i in range(graph.n_vertices - 1)
    ]
    return Dataset(
        dim=config.dim,
        odometry=odometry,
        measurements=measurements,
        sigma=config.lm_std,
        gt_trajectory=proxy,
        gt_landmarks=landmarks,
        gt_associations=assoc,
    )


def reference_solution(dataset: Dataset) -> SolveResult:
    """Batch solve with the true associations: the ATE reference trajectory."""
    x_init = compose_chain(dataset.odometry)
    y_init = first_observation_init(dataset.measurements, dataset.gt_associations,
                                    x_init)
    graph = build_slam_graph(dataset.odometry, dataset.measurements,
                             dataset.gt_associations, dataset.sigma,
                             prior_target=x_init[0])
    return optimize_lm(graph, Estimate(x_init, y_init))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _pose_to_obj(p: Pose):
    if p.d == 2:
        return {"t": p.translation.tolist(), "r": float(so_log(p.rotation)[0])}
    return {"t": p.translation.tolist(), "r": rotmat_to_quat(p.rotation).tolist()}


def _pose_from_obj(obj, dim: int) -> Pose:
    t = np.asarray(obj["t"], dtype=float)
    if dim == 2:
        return Pose(rot2(obj["r"]), t)
    return Pose(quat_to_rotmat(*obj["r"]), t)


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "format_version": DATASET_FORMAT_VERSION,
        "dim": ds.dim,
        "sigma": ds.sigma,
        "odometry": [
            {"from": f.from_idx, "to": f.to_idx, **_pose_to_obj(f.rel_pose),
             "info_sqrt": f.info_sqrt.tolist()}
            for f in ds.odometry
        ],
        "measurements": [
            {"pose": int(ds.measurements.pose_indices[k]),
             "z": ds.measurements.values[k].tolist()}
            for k in range(ds.m)
        ],
        "gt_trajectory": [_pose_to_obj(p) for p in ds.gt_trajectory],
        "gt_landmarks": ds.gt_landmarks.T.tolist(),
        "gt_associations": ds.gt_associations.tolist(),
    }


def dataset_from_dict(obj: dict) -> Dataset:
    version = obj.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version: {version!r}")
    dim = int(obj["dim"])
    odometry = [
        OdometryFactor(rec["from"], rec["to"],
                       _pose_from_obj(rec, dim),
                       np.asarray(rec["info_sqrt"], dtype=float))
        for rec in obj["odometry"]
    ]
    meas = Measurements(
        np.array([rec["pose"] for rec in obj["measurements"]], dtype=int),
        np.array([rec["z"] for rec in obj["measurements"]], dtype=float).reshape(-1, dim),
    )
    return Dataset(
        dim=dim,
        odometry=odometry,
        measurements=meas,
        sigma=float(obj["sigma"]),
        gt_trajectory=[_pose_from_obj(rec, dim) for rec in obj["gt_trajectory"]],
        gt_landmarks=np.asarray(obj["gt_landmarks"], dtype=float).T.reshape(dim, -1),
        gt_associations=np.asarray(obj["gt_associations"], dtype=int),
    )


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(ds), fh, indent=2)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        return dataset_from_dict(json.load(fh))


def apply_sweep_parameter(config: DatasetConfig, name: str, value) -> DatasetConfig:
    """Derive a config for one sweep point.

    odom_noise scales both odometry stds (value 1.0 = the template), lm_noise
    sets the landmark measurement std, n_landmarks sets the landmark count.
    """
    if name == "odom_noise":
        return replace(config,
                       odom_trans_std=config.odom_trans_std * float(value),
                       odom_rot_std=config.odom_rot_std * float(value))
    if name == "lm_noise":
        return replace(config, lm_std=float(value))
    if name == "n_landmarks":
        return replace(config, n_landmarks=int(value))
    raise ValueError(f"unknown sweep parameter {name!r}")
