"""Nonlinear least-squares core: factors, Jacobians, Levenberg-Marquardt.

All residuals are whitened (premultiplied by the square-root information),
so the objective reported everywhere is a plain sum of squared residuals.
Residual and tangent vectors pack translation components first, matching
the (x, y, theta) / (x, y, z, rx, ry, rz) ordering of g2o information
matrices.

The landmark measurement residual follows the body-frame convention

    e = (R^T (y - t) - z) / sigma

and the joint objective with free per-measurement association is

    f_slam(x, y) = f_odom(x) + sum_k min_j || R^T (y_j - t) - z_k ||^2 / sigma^2
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    _J2,
    Pose,
    compose,
    inverse,
    pose_dof,
    retract,
    rot_dof,
    skew,
    so_log,
    so3_jr_inv,
)

# Sigmas are floored so zero-noise datasets still produce finite weights.
_SIGMA_FLOOR = 1e-9
# Cost below this is treated as an exact minimum (no LM step attempted).
_ABS_COST_TOL = 1e-20
# Variable count above which the normal equations go through the sparse path.
DENSE_VARIABLE_LIMIT = 2000

PRIOR_INFO_DIAG = 1e4


class GraphStructureError(RuntimeError):
    """Normal equations are structurally rank-deficient (disconnected variables)."""

    def __init__(self, variables):
        self.variables = list(variables)
        names = ", ".join(f"{kind}[{idx}]" for kind, idx in self.variables)
        super().__init__(f"normal equations rank-deficient; no factor constrains: {names}")


def effective_sigma(sigma: float) -> float:
    return max(float(sigma), _SIGMA_FLOOR)


def diag_info_sqrt(trans_std: float, rot_std: float, d: int) -> np.ndarray:
    """Diagonal whitening matrix for a pose residual from per-axis stds."""
    w = [1.0 / effective_sigma(trans_std)] * d + [1.0 / effective_sigma(rot_std)] * rot_dof(d)
    return np.diag(w)


@dataclass
class Measurements:
    """Anonymous landmark observations: pose index plus body-frame vector."""

    pose_indices: np.ndarray  # (m,) int
    values: np.ndarray        # (m, d)

    def __post_init__(self):
        self.pose_indices = np.asarray(self.pose_indices, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.pose_indices.shape[0] != self.values.shape[0]:
            raise ValueError("pose_indices and values length mismatch")

    def __len__(self) -> int:
        return self.pose_indices.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def subset(self, idx) -> "Measurements":
        return Measurements(self.pose_indices[idx], self.values[idx])


@dataclass
class OdometryFactor:
    """Relative-pose factor between two poses (chain odometry or loop closure)."""

    from_idx: int
    to_idx: int
    rel_pose: Pose
    info_sqrt: np.ndarray

    @property
    def dim(self) -> int:
        return pose_dof(self.rel_pose.d)


@dataclass
class LandmarkFactor:
    pose_idx: int
    landmark_idx: int
    measured: np.ndarray  # (d,) body-frame observation
    sigma: float

    def __post_init__(self):
        self.measured = np.asarray(self.measured, dtype=float)


@dataclass
class PriorFactor:
    """Gauge anchor pinning one pose (always pose 0 in SLAM graphs)."""

    pose_idx: int
    target: Pose
    info_sqrt: np.ndarray


@dataclass
class FactorGraph:
    n_poses: int
    n_landmarks: int
    priors: list = field(default_factory=list)
    odometry: list = field(default_factory=list)
    landmark_factors: list = field(default_factory=list)

    @property
    def factors(self) -> list:
        return [*self.priors, *self.odometry, *self.landmark_factors]

    @property
    def d(self) -> int:
        if self.priors:
            return self.priors[0].target.d
        if self.odometry:
            return self.odometry[0].rel_pose.d
        return self.landmark_factors[0].measured.shape[0]


@dataclass
class Estimate:
    poses: list          # list[Pose], length n_poses
    landmarks: np.ndarray  # (d, K)

    def copy(self) -> "Estimate":
        return Estimate([p.copy() for p in self.poses], self.landmarks.copy())


@dataclass
class SolveResult:
    trajectory: list
    landmarks: np.ndarray       # (d, K)
    associations: np.ndarray    # (m,) 0-based landmark index per measurement
    objective: float
    iterations: int
    f_slam_evaluations: int = 0
    wall_time_sec: float = 0.0
    converged: bool = True
    cost_trace: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.landmarks.shape[1]


@dataclass
class LmConfig:
    max_iters: int = 100
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    rel_tol: float = 1e-6


def compose_chain(odometry, start: Pose | None = None) -> list:
    """Dead-reckoned trajectory: x_0 = start (identity), x_{i+1} = x_i * rel_i."""
    if not odometry:
        return [start.copy() if start is not None else Pose.identity(2)]
    d = odometry[0].rel_pose.d
    poses = [start.copy() if start is not None else Pose.identity(d)]
    for f in odometry:
        poses.append(compose(poses[-1], f.rel_pose))
    return poses


def build_slam_graph(odometry, measurements: Measurements, associations, sigma,
                     prior_target: Pose | None = None,
                     n_landmarks: int | None = None) -> FactorGraph:
    """Assemble prior + odometry + landmark factors for fixed associations.

    Every landmark index in [0, K) must be referenced by at least one
    measurement; K defaults to max(associations) + 1.
    """
    associations = np.asarray(associations, dtype=int)
    m = len(measurements)
    if associations.shape[0] != m:
        raise ValueError("associations length must equal number of measurements")
    n_poses = len(odometry) + 1
    if m > 0:
        if associations.min() < 0:
            raise ValueError("association index out of range (negative)")
        k = int(associations.max()) + 1 if n_landmarks is None else int(n_landmarks)
        if associations.max() >= k:
            raise ValueError(
                f"association index {associations.max()} out of range for K={k}")
        referenced = np.bincount(associations, minlength=k) > 0
        if not referenced.all():
            missing = np.flatnonzero(~referenced).tolist()
            raise ValueError(f"landmark indices never referenced: {missing}")
        if measurements.pose_indices.max() >= n_poses:
            raise ValueError("measurement pose index out of range")
    else:
        k = 0 if n_landmarks is None else int(n_landmarks)

    d = odometry[0].rel_pose.d if odometry else measurements.d
    target = prior_target if prior_target is not None else Pose.identity(d)
    prior = PriorFactor(0, target.copy(), PRIOR_INFO_DIAG * np.eye(pose_dof(d)))
    lm_factors = [
        LandmarkFactor(int(measurements.pose_indices[i]), int(associations[i]),
                       measurements.values[i].copy(), sigma)
        for i in range(m)
    ]
    return FactorGraph(n_poses, k, [prior], list(odometry), lm_factors)


# ---------------------------------------------------------------------------
# Residuals and Jacobians
# ---------------------------------------------------------------------------

def _rot_perturbation_block(v: np.ndarray, d: int) -> np.ndarray:
    """D such that Exp(-dw) v ~ v + D dw for the right-perturbation chart."""
    if d == 2:
        return (-_J2 @ v).reshape(2, 1)
    return skew(v)


def _prior_residual(factor: PriorFactor, pose: Pose):
    e_t = pose.translation - factor.target.translation
    e_w = so_log(factor.target.rotation.T @ pose.rotation)
    return factor.info_sqrt @ np.concatenate([e_t, e_w])


def _prior_jacobian(factor: PriorFactor, pose: Pose):
    d = pose.d
    rdof = rot_dof(d)
    raw = np.zeros((d + rdof, d + rdof))
    raw[:d, :d] = np.eye(d)
    if d == 2:
        raw[d:, d:] = 1.0
    else:
        e_w = so_log(factor.target.rotation.T @ pose.rotation)
        raw[d:, d:] = so3_jr_inv(e_w)
    return factor.info_sqrt @ raw


def _odometry_residual(factor: OdometryFactor, pa: Pose, pb: Pose):
    Z = factor.rel_pose
    e_t = pa.rotation.T @ (pb.translation - pa.translation) - Z.translation
    e_w = so_log(Z.rotation.T @ (pa.rotation.T @ pb.rotation))
    return factor.info_sqrt @ np.concatenate([e_t, e_w])


def _odometry_jacobians(factor: OdometryFactor, pa: Pose, pb: Pose):
    d = pa.d
    rdof = rot_dof(d)
    dof = d + rdof
    Z = factor.rel_pose
    RaT = pa.rotation.T
    v = RaT @ (pb.translation - pa.translation)

    Ja = np.zeros((dof, dof))
    Jb = np.zeros((dof, dof))
    Ja[:d, :d] = -RaT
    Jb[:d, :d] = RaT
    Ja[:d, d:] = _rot_perturbation_block(v, d)
    if d == 2:
        Ja[d:, d:] = -1.0
        Jb[d:, d:] = 1.0
    else:
        e_w = so_log(Z.rotation.T @ (RaT @ pb.rotation))
        Jb[d:, d:] = so3_jr_inv(e_w)
        # Left perturbation Exp(-Z_R^T dw_i) of the rotation error matrix.
        Ja[d:, d:] = -so3_jr_inv(-e_w) @ Z.rotation.T
    return factor.info_sqrt @ Ja, factor.info_sqrt @ Jb


def _landmark_residual(factor: LandmarkFactor, pose: Pose, y: np.ndarray):
    inv_sigma = 1.0 / effective_sigma(factor.sigma)
    return (pose.rotation.T @ (y - pose.translation) - factor.measured) * inv_sigma


def measurement_jacobian(pose: Pose, y: np.ndarray):
    """Unwhitened Jacobian of h(x, y) = R^T (y - t) w.r.t. [pose tangent; y]."""
    d = pose.d
    RT = pose.rotation.T
    v = RT @ (y - pose.translation)
    J_pose = np.concatenate([-RT, _rot_perturbation_block(v, d)], axis=1)
    return J_pose, RT.copy()


def _landmark_jacobians(factor: LandmarkFactor, pose: Pose, y: np.ndarray):
    inv_sigma = 1.0 / effective_sigma(factor.sigma)
    J_pose, J_lm = measurement_jacobian(pose, y)
    return J_pose * inv_sigma, J_lm * inv_sigma


def residual_and_jacobian(factor, estimate: Estimate):
    """Whitened residual plus Jacobian blocks keyed by connected variable.

    Keys are ("pose", i) or ("landmark", j); blocks are in the retraction
    chart (translation columns first, rotation columns last).
    """
    if isinstance(factor, PriorFactor):
        pose = estimate.poses[factor.pose_idx]
        return _prior_residual(factor, pose), {
            ("pose", factor.pose_idx): _prior_jacobian(factor, pose)}
    if isinstance(factor, OdometryFactor):
        pa = estimate.poses[factor.from_idx]
        pb = estimate.poses[factor.to_idx]
        Ja, Jb = _odometry_jacobians(factor, pa, pb)
        return _odometry_residual(factor, pa, pb), {
            ("pose", factor.from_idx): Ja, ("pose", factor.to_idx): Jb}
    if isinstance(factor, LandmarkFactor):
        pose = estimate.poses[factor.pose_idx]
        y = estimate.landmarks[:, factor.landmark_idx]
        Jp, Jl = _landmark_jacobians(factor, pose, y)
        return _landmark_residual(factor, pose, y), {
            ("pose", factor.pose_idx): Jp, ("landmark", factor.landmark_idx): Jl}
    raise TypeError(f"unknown factor type {type(factor)!r}")


# ---------------------------------------------------------------------------
# Cost evaluation (vectorized over landmark factors)
# ---------------------------------------------------------------------------

def _stacked_pose_arrays(poses):
    R = np.stack([p.rotation for p in poses])
    t = np.stack([p.translation for p in poses])
    return R, t


def _landmark_cost(graph: FactorGraph, est: Estimate, R=None, t=None) -> float:
    if not graph.landmark_factors:
        return 0.0
    if R is None:
        R, t = _stacked_pose_arrays(est.poses)
    pidx = np.array([f.pose_idx for f in graph.landmark_factors])
    lidx = np.array([f.landmark_idx for f in graph.landmark_factors])
    z = np.stack([f.measured for f in graph.landmark_factors])
    inv_sig = np.array([1.0 / effective_sigma(f.sigma) for f in graph.landmark_factors])
    Ri, ti = R[pidx], t[pidx]
    y = est.landmarks[:, lidx].T
    e = np.einsum("kba,kb->ka", Ri, y - ti) - z
    return float(np.sum((e * inv_sig[:, None]) ** 2))


def _odometry_cost_2d(odometry, R, t) -> float:
    """Batched whitened odometry cost for planar graphs."""
    ai = np.array([f.from_idx for f in odometry])
    bi = np.array([f.to_idx for f in odometry])
    Za = np.stack([f.rel_pose.rotation for f in odometry])
    Zt = np.stack([f.rel_pose.translation for f in odometry])
    W = np.stack([f.info_sqrt for f in odometry])
    theta = np.arctan2(R[:, 1, 0], R[:, 0, 0])
    z_theta = np.arctan2(Za[:, 1, 0], Za[:, 0, 0])
    e_w = theta[bi] - theta[ai] - z_theta
    e_w = (e_w + np.pi) % (2.0 * np.pi) - np.pi
    dt = t[bi] - t[ai]
    e_t = np.einsum("kba,kb->ka", R[ai], dt) - Zt
    e = np.concatenate([e_t, e_w[:, None]], axis=1)
    r = np.einsum("kab,kb->ka", W, e)
    return float(np.sum(r * r))


def graph_cost(graph: FactorGraph, est: Estimate) -> float:
    """Sum of squared whitened residuals of every factor in the graph."""
    c = 0.0
    for f in graph.priors:
        r = _prior_residual(f, est.poses[f.pose_idx])
        c += float(r @ r)
    if graph.odometry:
        if graph.d == 2:
            R, t = _stacked_pose_arrays(est.poses)
            c += _odometry_cost_2d(graph.odometry, R, t)
        else:
            for f in graph.odometry:
                r = _odometry_residual(f, est.poses[f.from_idx], est.poses[f.to_idx])
                c += float(r @ r)
    return c + _landmark_cost(graph, est)


def odometry_cost(poses, odometry) -> float:
    """Whitened relative-pose cost of the odometry chain at the given poses."""
    c = 0.0
    for f in odometry:
        r = _odometry_residual(f, poses[f.from_idx], poses[f.to_idx])
        c += float(r @ r)
    return c


def project_measurements(poses, measurements: Measurements) -> np.ndarray:
    """World-frame projection R z + t of every measurement, shape (m, d)."""
    R, t = _stacked_pose_arrays(poses)
    Ri = R[measurements.pose_indices]
    ti = t[measurements.pose_indices]
    return np.einsum("kab,kb->ka", Ri, measurements.values) + ti


def landmark_term(poses, landmarks, measurements: Measurements, sigma):
    """Landmark part of f_slam with the per-measurement min over columns.

    Computed in the world frame (the l2 norm is rotation invariant, so this
    equals the body-frame form exactly). Returns (cost, argmin associations).
    """
    m = len(measurements)
    if m == 0:
        return 0.0, np.zeros(0, dtype=int)
    zhat = project_measurements(poses, measurements)
    diff = zhat[:, :, None] - landmarks[None, :, :]
    d2 = np.einsum("mdk,mdk->mk", diff, diff)
    j = np.argmin(d2, axis=1)
    cost = float(d2[np.arange(m), j].sum()) / effective_sigma(sigma) ** 2
    return cost, j


def f_slam(poses, landmarks, measurements: Measurements, odometry, sigma) -> float:
    """Joint objective: odometry cost plus min-association landmark cost.

    The gauge prior is excluded; it is an anchoring artifact, not part of
    the objective.
    """
    if landmarks.shape[1] < 1:
        raise ValueError("landmark matrix needs at least one column")
    cost, _ = landmark_term(poses, landmarks, measurements, sigma)
    return odometry_cost(poses, odometry) + cost


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------

class _Indexer:
    """Flat tangent-space offsets: poses first, then landmark columns."""

    def __init__(self, graph: FactorGraph):
        d = graph.d
        self.d = d
        self.pdof = pose_dof(d)
        self.n_poses = graph.n_poses
        self.n_landmarks = graph.n_landmarks
        self.n_vars = graph.n_poses * self.pdof + graph.n_landmarks * d

    def pose(self, i: int) -> int:
        return i * self.pdof

    def landmark(self, j: int) -> int:
        return self.n_poses * self.pdof + j * self.d

    def variable_name(self, flat: int):
        if flat < self.n_poses * self.pdof:
            return ("pose", flat // self.pdof)
        return ("landmark", (flat - self.n_poses * self.pdof) // self.d)


def _landmark_blocks(graph: FactorGraph, est: Estimate):
    """Vectorized residuals and Jacobian blocks for all landmark factors."""
    d = graph.d
    R, t = _stacked_pose_arrays(est.poses)
    pidx = np.array([f.pose_idx for f in graph.landmark_factors])
    lidx = np.array([f.landmark_idx for f in graph.landmark_factors])
    z = np.stack([f.measured for f in graph.landmark_factors])
    inv_sig = np.array([1.0 / effective_sigma(f.sigma) for f in graph.landmark_factors])
    RT = np.transpose(R[pidx], (0, 2, 1))
    ti = t[pidx]
    y = est.landmarks[:, lidx].T
    v = np.einsum("kab,kb->ka", RT, y - ti)
    res = (v - z) * inv_sig[:, None]
    m = len(graph.landmark_factors)
    rdof = rot_dof(d)
    Jp = np.empty((m, d, d + rdof))
    Jp[:, :, :d] = -RT
    if d == 2:
        Jp[:, 0, 2] = v[:, 1]
        Jp[:, 1, 2] = -v[:, 0]
    else:
        Jp[:, :, d:] = skew_batch(v)
    Jp *= inv_sig[:, None, None]
    Jl = RT * inv_sig[:, None, None]
    return pidx, lidx, res, Jp, Jl


def skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros((v.shape[0], 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def _normal_equations(graph: FactorGraph, est: Estimate, ix: _Indexer):
    """Accumulate H = J^T J and g = J^T r as block triplets."""
    blocks = []  # (row_offset, col_offset, matrix); upper off-diagonal only
    g = np.zeros(ix.n_vars)

    def add(off_a, Ja, off_b, Jb, r):
        blocks.append((off_a, off_a, Ja.T @ Ja))
        blocks.append((off_b, off_b, Jb.T @ Jb))
        blocks.append((off_a, off_b, Ja.T @ Jb))
        g[off_a:off_a + Ja.shape[1]] += Ja.T @ r
        g[off_b:off_b + Jb.shape[1]] += Jb.T @ r

    for f in graph.priors:
        pose = est.poses[f.pose_idx]
        r = _prior_residual(f, pose)
        J = _prior_jacobian(f, pose)
        off = ix.pose(f.pose_idx)
        blocks.append((off, off, J.T @ J))
        g[off:off + ix.pdof] += J.T @ r
    for f in graph.odometry:
        r = _odometry_residual(f, est.poses[f.from_idx], est.poses[f.to_idx])
        Ja, Jb = _odometry_jacobians(f, est.poses[f.from_idx], est.poses[f.to_idx])
        add(ix.pose(f.from_idx), Ja, ix.pose(f.to_idx), Jb, r)
    if graph.landmark_factors:
        pidx, lidx, res, Jp, Jl = _landmark_blocks(graph, est)
        JpT = np.transpose(Jp, (0, 2, 1))
        Hpp = JpT @ Jp
        Hpl = JpT @ Jl
        Hll = np.transpose(Jl, (0, 2, 1)) @ Jl
        gp = np.einsum("kab,ka->kb", Jp, res)
        gl = np.einsum("kab,ka->kb", Jl, res)
        for k in range(len(pidx)):
            po = ix.pose(pidx[k])
            lo = ix.landmark(lidx[k])
            blocks.append((po, po, Hpp[k]))
            blocks.append((lo, lo, Hll[k]))
            blocks.append((po, lo, Hpl[k]))
            g[po:po + ix.pdof] += gp[k]
            g[lo:lo + ix.d] += gl[k]
    return blocks, g


def _materialize_dense(blocks, n):
    H = np.zeros((n, n))
    for ra, ca, B in blocks:
        H[ra:ra + B.shape[0], ca:ca + B.shape[1]] += B
        if ra != ca:
            H[ca:ca + B.shape[1], ra:ra + B.shape[0]] += B.T
    return H


def _materialize_sparse(blocks, n):
    import scipy.sparse as sp

    rows, cols, vals = [], [], []
    for ra, ca, B in blocks:
        h, w = B.shape
        r = np.repeat(np.arange(ra, ra + h), w)
        c = np.tile(np.arange(ca, ca + w), h)
        rows.append(r)
        cols.append(c)
        vals.append(B.ravel())
        if ra != ca:
            rows.append(c)
            cols.append(r)
            vals.append(B.T.ravel(order="F"))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )


def _solve_damped(H, g, diag, lam, dense: bool):
    """Solve (H + lam * diag) delta = -g without mutating H."""
    damp = lam * np.maximum(diag, 1e-12)
    if dense:
        from scipy.linalg import cho_factor, cho_solve

        A = H.copy()
        A[np.diag_indices(A.shape[0])] += damp
        try:
            return -cho_solve(cho_factor(A, lower=True, check_finite=False), g,
                              check_finite=False)
        except (np.linalg.LinAlgError, ValueError):  # non-PD or NaN input
            return None
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    A = (H + sp.diags(damp)).tocsc()
    with np.errstate(all="ignore"):
        delta = spla.spsolve(A, g)
    return -delta


def _apply_step(est: Estimate, delta: np.ndarray, ix: _Indexer) -> Estimate:
    poses = [
        retract(p, delta[ix.pose(i):ix.pose(i) + ix.pdof])
        for i, p in enumerate(est.poses)
    ]
    landmarks = est.landmarks.copy()
    for j in range(ix.n_landmarks):
        off = ix.landmark(j)
        landmarks[:, j] += delta[off:off + ix.d]
    return Estimate(poses, landmarks)


def _structural_rank_check(diag: np.ndarray, ix: _Indexer):
    """Zero diagonal entries of J^T J mean a variable no factor touches."""
    dead = np.flatnonzero(diag == 0.0)
    if dead.size:
        seen, names = set(), []
        for flat in dead:
            name = ix.variable_name(int(flat))
            if name not in seen:
                seen.add(name)
                names.append(name)
        raise GraphStructureError(names)


def optimize_lm(graph: FactorGraph, initial: Estimate,
                config: LmConfig | None = None) -> SolveResult:
    """Levenberg-Marquardt over the factor graph from the given estimate.

    Steps are accepted only when they do not increase the cost, so the
    objective is non-increasing across accepted iterations. Terminates on a
    relative cost decrease below rel_tol, on max_iters, or when damping
    escalation stalls.
    """
    cfg = config or LmConfig()
    ix = _Indexer(graph)
    if len(initial.poses) != graph.n_poses or initial.landmarks.shape[1] != graph.n_landmarks:
        raise ValueError("initial estimate does not match graph variables")
    t0 = time.perf_counter()
    est = initial.copy()
    cost = graph_cost(graph, est)
    trace = [cost]
    lam = cfg.lambda0
    iterations = 0
    converged = cost <= _ABS_COST_TOL
    dense = ix.n_vars <= DENSE_VARIABLE_LIMIT

    structure_checked = False
    while not converged and iterations < cfg.max_iters:
        blocks, g = _normal_equations(graph, est, ix)
        H = (_materialize_dense(blocks, ix.n_vars) if dense
             else _materialize_sparse(blocks, ix.n_vars))
        diag = np.asarray(H.diagonal()).ravel().copy()
        if not structure_checked:
            # Connectivity cannot change during the solve; check once.
            _structural_rank_check(diag, ix)
            structure_checked = True
        stepped = False
        while True:
            delta = _solve_damped(H, g, diag, lam, dense)
            if delta is not None and np.all(np.isfinite(delta)):
                candidate = _apply_step(est, delta, ix)
                new_cost = graph_cost(graph, candidate)
                if new_cost <= cost:
                    est = candidate
                    iterations += 1
                    drop = cost - new_cost
                    rel = drop / max(cost, 1e-300)
                    cost = new_cost
                    trace.append(cost)
                    lam = max(lam / cfg.lambda_down, 1e-12)
                    stepped = True
                    if rel < cfg.rel_tol or cost <= _ABS_COST_TOL:
                        converged = True
                    break
            lam *= cfg.lambda_up
            if lam > 1e12:
                break
        if not stepped:
            break

    associations = np.array([f.landmark_idx for f in graph.landmark_factors], dtype=int)
    return SolveResult(
        trajectory=est.poses,
        landmarks=est.landmarks,
        associations=associations,
        objective=cost,
        iterations=iterations,
        wall_time_sec=time.perf_counter() - t0,
        converged=converged,
        cost_trace=trace,
    )


def solve_fixed_associations(odometry, measurements: Measurements, associations,
                             sigma, poses, landmarks: np.ndarray, anchor: Pose,
                             config: LmConfig | None = None):
    """Batch solve with fixed associations, tolerating unreferenced columns.

    Landmark columns no measurement points at (possible with degenerate
    clusterings or association steps) are held at their current value; the
    rest are optimized. Returns (trajectory, full landmark matrix, result).
    """
    associations = np.asarray(associations, dtype=int)
    k = landmarks.shape[1]
    referenced = np.unique(associations)
    if referenced.size == k:
        graph = build_slam_graph(odometry, measurements, associations, sigma,
                                 prior_target=anchor)
        res = optimize_lm(graph, Estimate(poses, landmarks), config)
        return res.trajectory, res.landmarks, res
    remap = -np.ones(k, dtype=int)
    remap[referenced] = np.arange(referenced.size)
    graph = build_slam_graph(odometry, measurements, remap[associations], sigma,
                             prior_target=anchor)
    res = optimize_lm(graph, Estimate(poses, landmarks[:, referenced]), config)
    full = landmarks.copy()
    full[:, referenced] = res.landmarks
    return res.trajectory, full, res


# ---------------------------------------------------------------------------
# Marginal covariances (for maximum-likelihood gating)
# ---------------------------------------------------------------------------

class Marginals:
    """Joint covariance blocks from the inverse of the linearized information."""

    def __init__(self, graph: FactorGraph, est: Estimate):
        ix = _Indexer(graph)
        blocks, _ = _normal_equations(graph, est, ix)
        H = _materialize_dense(blocks, ix.n_vars)
        _structural_rank_check(H.diagonal(), ix)
        self._cov = np.linalg.inv(H)
        self._ix = ix

    def joint_block(self, pose_idx: int, landmark_idx: int) -> np.ndarray:
        """Covariance of [pose tangent; landmark] for the given pair."""
        ix = self._ix
        sel = np.concatenate([
            np.arange(ix.pose(pose_idx), ix.pose(pose_idx) + ix.pdof),
            np.arange(ix.landmark(landmark_idx), ix.landmark(landmark_idx) + ix.d),
        ])
        return self._cov[np.ix_(sel, sel)]


def compute_marginals(graph: FactorGraph, est: Estimate) -> Marginals:
    return Marginals(graph, est)
