"""Comparison methods: odometry-only, oracle alternation, incremental ML.

The maximum-likelihood baseline propagates odometry sequentially. At each
time step every new measurement is chi-squared gated against every existing
landmark using the innovation covariance S = H P H^T + Q (P the joint
pose/landmark marginal from the current linearization), admissible pairs are
scored by negative log-likelihood log det S + eps, a minimum-cost assignment
enforces one new measurement per landmark, leftovers spawn landmarks at
their world-frame projection, and a batch optimization refines everything.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .factor_graph import (
    Estimate,
    LmConfig,
    Marginals,
    Measurements,
    SolveResult,
    build_slam_graph,
    compose_chain,
    effective_sigma,
    f_slam,
    landmark_term,
    measurement_jacobian,
    odometry_cost,
    optimize_lm,
    solve_fixed_associations,
)
from .geometry import Pose, compose, project_to_world
from .kslam import chi2_quantile

logger = logging.getLogger(__name__)


@dataclass
class MlConfig:
    chi2_tail: float = 0.8  # 0.9 works better on Garage-like dense-info inputs
    lm: LmConfig = field(default_factory=LmConfig)

    def __post_init__(self):
        if not 0.0 < self.chi2_tail < 1.0:
            raise ValueError("chi2_tail must be in (0, 1)")


@dataclass
class AssociationHypothesis:
    measurement_idx: int
    landmark_idx: int
    mahalanobis: float
    nll: float


def odom_trajectory(odometry) -> list:
    """Dead-reckoned trajectory from identity (no landmark information)."""
    return compose_chain(odometry)


def first_observation_init(measurements: Measurements, associations,
                           x_init) -> np.ndarray:
    """Landmark init: project each landmark's earliest observation to world.

    Earliest means the lowest observing pose index. Every landmark must be
    observed at least once.
    """
    associations = np.asarray(associations, dtype=int)
    k = int(associations.max()) + 1
    y = np.full((x_init[0].d, k), np.nan)
    first_pose = np.full(k, np.iinfo(np.int64).max)
    for m_idx in range(len(measurements)):
        j = associations[m_idx]
        i = int(measurements.pose_indices[m_idx])
        if i < first_pose[j]:
            first_pose[j] = i
            y[:, j] = project_to_world(x_init[i], measurements.values[m_idx])
    if np.isnan(y).any():
        missing = sorted(set(range(k)) - set(associations.tolist()))
        raise ValueError(f"landmarks never observed: {missing}")
    return y


def _nearest_landmark_associations(poses, landmarks, measurements, sigma):
    _, assoc = landmark_term(poses, landmarks, measurements, sigma)
    return assoc


def oracle_solve(odometry, measurements: Measurements, sigma: float,
                 k_true: int, y_init: np.ndarray, max_iters: int = 15,
                 x_init=None, lm_config: LmConfig | None = None) -> SolveResult:
    """Alternation with the true landmark count and a landmark initial guess.

    Repeats nearest-landmark association followed by batch optimization
    until the association vector stops changing or max_iters is reached.
    Landmarks that receive no measurements in a round are frozen at their
    current estimate for that round's optimization.
    """
    if y_init.shape[1] != k_true:
        raise ValueError("y_init must have k_true columns")
    t0 = time.perf_counter()
    poses = [p.copy() for p in (x_init if x_init is not None else compose_chain(odometry))]
    anchor = poses[0]
    y = y_init.copy()
    prev_assoc = None
    iterations = 0
    for _ in range(max_iters):
        assoc = _nearest_landmark_associations(poses, y, measurements, sigma)
        if prev_assoc is not None and np.array_equal(assoc, prev_assoc):
            break
        prev_assoc = assoc
        poses, y, _ = solve_fixed_associations(
            odometry, measurements, assoc, sigma, poses, y, anchor, lm_config)
        iterations += 1
    lm_cost, assoc = landmark_term(poses, y, measurements, sigma)
    return SolveResult(
        trajectory=poses,
        landmarks=y,
        associations=assoc,
        objective=odometry_cost(poses, odometry) + lm_cost,
        iterations=iterations,
        wall_time_sec=time.perf_counter() - t0,
    )


def mahalanobis_gate(z: np.ndarray, pose_idx: int, estimate: Estimate,
                     marginals: Marginals, sigma: float, chi2_tail: float,
                     measurement_idx: int = 0) -> list:
    """Chi-squared gating of one measurement against every landmark.

    Returns the admissible hypotheses with their Mahalanobis distance and
    negative log-likelihood score. Hypotheses whose innovation covariance is
    not positive-definite are dropped with a logged diagnostic.
    """
    pose = estimate.poses[pose_idx]
    d = pose.d
    threshold = chi2_quantile(chi2_tail, d)
    q_cov = effective_sigma(sigma) ** 2 * np.eye(d)
    out = []
    for j in range(estimate.landmarks.shape[1]):
        y = estimate.landmarks[:, j]
        predicted = pose.rotation.T @ (y - pose.translation)
        innovation = z - predicted
        Jp, Jl = measurement_jacobian(pose, y)
        H = np.concatenate([Jp, Jl], axis=1)
        P = marginals.joint_block(pose_idx, j)
        S = H @ P @ H.T + q_cov
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            logger.warning("innovation covariance not PD for landmark %d; skipping", j)
            continue
        w = np.linalg.solve(L, innovation)
        eps = float(w @ w)
        if eps < threshold:
            nll = 2.0 * float(np.log(np.diag(L)).sum()) + eps
            out.append(AssociationHypothesis(measurement_idx, j, eps, nll))
    return out


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost assignment rows -> columns; -1 marks unassigned rows.

    Accepts rectangular matrices (padded internally) and +inf entries, which
    are never selected; rows whose only options are +inf stay unassigned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a matrix")
    n, m = cost.shape
    if n == 0 or m == 0:
        return -np.ones(n, dtype=int)
    finite = cost[np.isfinite(cost)]
    if finite.size == 0:
        return -np.ones(n, dtype=int)
    size = max(n, m)
    span = float(finite.max() - finite.min())
    big = float(finite.max()) + (span + 1.0) * (size + 1)
    padded = np.full((size, size), big)
    block = cost.copy()
    block[~np.isfinite(block)] = big
    padded[:n, :m] = block
    cols = _lap_square(padded)
    out = np.empty(n, dtype=int)
    for r in range(n):
        c = cols[r]
        out[r] = c if c < m and np.isfinite(cost[r, c]) else -1
    return out


def _lap_square(a: np.ndarray) -> np.ndarray:
    """O(n^3) shortest-augmenting-path assignment on a square matrix."""
    n = a.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # column -> row, 1-based; 0 = free
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    cols = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        if match[j]:
            cols[match[j] - 1] = j - 1
    return cols


def ml_solve(odometry, measurements: Measurements, sigma: float,
             config: MlConfig | None = None) -> SolveResult:
    """Incremental maximum-likelihood data association over time steps.

    Measurements must be ordered by pose index. Landmark count only grows;
    a batch optimization runs after every step that brought measurements. A
    diverged optimization leaves the previous estimate in place.
    """
    cfg = config or MlConfig()
    if len(measurements) and np.any(np.diff(measurements.pose_indices) < 0):
        raise ValueError("measurements must be sorted by pose index")
    d = odometry[0].rel_pose.d if odometry else measurements.d
    n_poses = len(odometry) + 1
    m = len(measurements)
    t0 = time.perf_counter()

    poses = [Pose.identity(d)]
    anchor = poses[0]
    landmark_cols: list[np.ndarray] = []
    assoc = np.full(m, -1, dtype=int)
    seen = 0  # measurements consumed so far

    for step in range(n_poses):
        if step > 0:
            poses.append(compose(poses[-1], odometry[step - 1].rel_pose))
        new_idx = []
        while seen + len(new_idx) < m and measurements.pose_indices[seen + len(new_idx)] == step:
            new_idx.append(seen + len(new_idx))
        if not new_idx:
            continue
        if landmark_cols:
            est = Estimate(poses, np.stack(landmark_cols, axis=1))
            graph = build_slam_graph(odometry[:step], measurements.subset(np.arange(seen)),
                                     assoc[:seen], sigma, prior_target=anchor,
                                     n_landmarks=len(landmark_cols))
            marginals = Marginals(graph, est)
            k = len(landmark_cols)
            cost = np.full((len(new_idx), k), np.inf)
            for row, m_idx in enumerate(new_idx):
                hyps = mahalanobis_gate(
                    measurements.values[m_idx], step, est, marginals, sigma,
                    cfg.chi2_tail, measurement_idx=m_idx)
                for h in hyps:
                    cost[row, h.landmark_idx] = h.nll
            matches = hungarian(cost)
        else:
            matches = -np.ones(len(new_idx), dtype=int)
        for row, m_idx in enumerate(new_idx):
            if matches[row] >= 0:
                assoc[m_idx] = matches[row]
            else:
                landmark_cols.append(
                    project_to_world(poses[step], measurements.values[m_idx]))
                assoc[m_idx] = len(landmark_cols) - 1
        seen += len(new_idx)

        graph = build_slam_graph(odometry[:step], measurements.subset(np.arange(seen)),
                                 assoc[:seen], sigma, prior_target=anchor,
                                 n_landmarks=len(landmark_cols))
        try:
            res = optimize_lm(graph, Estimate(poses, np.stack(landmark_cols, axis=1)),
                              cfg.lm)
            poses = res.trajectory
            landmark_cols = [res.landmarks[:, j].copy() for j in range(res.landmarks.shape[1])]
        except (np.linalg.LinAlgError, ValueError, RuntimeError):
            logger.warning("batch optimization failed at step %d; keeping estimate", step)

    y = np.stack(landmark_cols, axis=1) if landmark_cols else np.zeros((d, 0))
    if y.shape[1]:
        objective = f_slam(poses, y, measurements, odometry, sigma)
    else:
        objective = odometry_cost(poses, odometry)
    return SolveResult(
        trajectory=poses,
        landmarks=y,
        associations=assoc,
        objective=objective,
        iterations=n_poses,
        wall_time_sec=time.perf_counter() - t0,
    )
