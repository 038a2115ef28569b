"""Pose algebra on SE(2)/SE(3) used by every other module.

Conventions
-----------
A pose is a pair (R, t) with R a d x d rotation matrix and t a d-vector.
A landmark y seen from a pose produces the body-frame measurement

    z = R^T (y - t)            (predict_measurement)
    y = R z + t                (project_to_world, the exact inverse)

Local perturbations are applied on the right of the rotation and
additively on the translation:

    retract((R, t), (dt, dw)) = (R Exp(dw), t + dt)

Tangent vectors are packed translation-first: [dt (d); dw (1 or 3)].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Generator of SO(2): d/dw Rot(w) at w=0.
_J2 = np.array([[0.0, -1.0], [1.0, 0.0]])

_ORTHO_TOL = 1e-7


def rot_dof(d: int) -> int:
    """Degrees of freedom of a rotation in dimension d (1 for d=2, 3 for d=3)."""
    if d == 2:
        return 1
    if d == 3:
        return 3
    raise ValueError(f"unsupported dimension {d}")


def pose_dof(d: int) -> int:
    """Degrees of freedom of a pose in dimension d (3 or 6)."""
    return d + rot_dof(d)


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def skew(w: np.ndarray) -> np.ndarray:
    """3-vector to antisymmetric matrix, skew(w) @ v == cross(w, v)."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def so_exp(w, d: int) -> np.ndarray:
    """Rotation-vector exponential: scalar angle for d=2, Rodrigues for d=3."""
    if d == 2:
        return rot2(float(np.asarray(w).reshape(())))
    w = np.asarray(w, dtype=float).reshape(3)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-10:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * (W @ W)


def so_log(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to rotation vector (shape (1,) for d=2, (3,) for d=3)."""
    d = R.shape[0]
    if d == 2:
        return np.array([np.arctan2(R[1, 0], R[0, 0])])
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-10:
        W = (R - R.T) / 2.0
        return np.array([W[2, 1], W[0, 2], W[1, 0]])
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part degenerates; recover the axis from
        # the dominant diagonal of R + I.
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-16))
        axis = axis / np.linalg.norm(axis)
        # Sign from the antisymmetric part when it is not exactly zero.
        w_approx = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w_approx, axis) < 0:
            axis = -axis
        return theta * axis
    W = (R - R.T) / 2.0
    w = np.array([W[2, 1], W[0, 2], W[1, 0]])
    return w * (theta / np.sin(theta))


def so3_jr_inv(w: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of the SO(3) exponential at rotation vector w."""
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * W + (W @ W) / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coef * (W @ W)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project onto the nearest rotation matrix (polar projection via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = U @ Vt
    if np.linalg.det(D) < 0:
        U = U.copy()
        U[:, -1] = -U[:, -1]
        D = U @ Vt
    return D


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    d = R.shape[0]
    return (
        np.abs(R @ R.T - np.eye(d)).max() < tol
        and abs(np.linalg.det(R) - 1.0) < tol
    )


@dataclass
class Pose:
    """Rigid transform (rotation, translation) in dimension d in {2, 3}.

    Treated as an immutable value; operations return new instances.
    """

    rotation: np.ndarray
    translation: np.ndarray

    @property
    def d(self) -> int:
        return self.translation.shape[0]

    @staticmethod
    def identity(d: int) -> "Pose":
        return Pose(np.eye(d), np.zeros(d))

    @staticmethod
    def from_xytheta(x: float, y: float, theta: float) -> "Pose":
        return Pose(rot2(theta), np.array([x, y], dtype=float))

    def copy(self) -> "Pose":
        return Pose(self.rotation.copy(), self.translation.copy())

    def __repr__(self) -> str:  # pragma: no cover
        return f"Pose(d={self.d}, t={np.array2string(self.translation, precision=4)})"


@dataclass
class Tangent:
    """Local perturbation of a pose: translation part plus rotation part.

    Packs to a vector of length 3 (d=2) or 6 (d=3), translation first.
    """

    trans_part: np.ndarray
    rot_part: np.ndarray

    @staticmethod
    def zero(d: int) -> "Tangent":
        return Tangent(np.zeros(d), np.zeros(rot_dof(d)))

    @staticmethod
    def from_vector(v: np.ndarray, d: int) -> "Tangent":
        v = np.asarray(v, dtype=float)
        if v.shape[0] != pose_dof(d):
            raise ValueError(f"tangent for d={d} must have length {pose_dof(d)}")
        return Tangent(v[:d], v[d:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.trans_part, np.atleast_1d(self.rot_part)])


def compose(a: Pose, b: Pose) -> Pose:
    """Pose composition a then b: (Ra Rb, Ra tb + ta)."""
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    R = a.rotation @ b.rotation
    # Long compose chains drift off the manifold; re-project when detectable.
    if np.abs(R @ R.T - np.eye(a.d)).max() > _ORTHO_TOL:
        R = orthonormalize(R)
    return Pose(R, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    """Pose inverse (R^T, -R^T t)."""
    Rt = p.rotation.T
    return Pose(Rt.copy(), -Rt @ p.translation)


def project_to_world(p: Pose, z: np.ndarray) -> np.ndarray:
    """Body-frame point z to the world frame: R z + t."""
    return p.rotation @ z + p.translation


def predict_measurement(p: Pose, y: np.ndarray) -> np.ndarray:
    """World point y in the body frame of p: R^T (y - t)."""
    return p.rotation.T @ (y - p.translation)


def retract(p: Pose, delta) -> Pose:
    """Apply a local perturbation: (R Exp(dw), t + dt).

    Accepts a Tangent or a packed vector [dt; dw].
    """
    if isinstance(delta, Tangent):
        dt, dw = delta.trans_part, delta.rot_part
    else:
        delta = np.asarray(delta, dtype=float)
        dt, dw = delta[: p.d], delta[p.d :]
    return Pose(p.rotation @ so_exp(dw, p.d), p.translation + dt)


def local_coords(base: Pose, target: Pose) -> np.ndarray:
    """Packed delta with retract(base, delta) == target (inverse of retract)."""
    dw = so_log(base.rotation.T @ target.rotation)
    dt = target.translation - base.translation
    return np.concatenate([dt, dw])


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix to unit quaternion (qx, qy, qz, qw), qw >= 0."""
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        qw = 0.25 * s
        qx = (R[2, 1] - R[1, 2]) / s
        qy = (R[0, 2] - R[2, 0]) / s
        qz = (R[1, 0] - R[0, 1]) / s
    else:
        k = int(np.argmax(np.diag(R)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = np.sqrt(R[k, k] - R[i, i] - R[j, j] + 1.0) * 2.0
        q = np.empty(3)
        q[k] = 0.25 * s
        q[i] = (R[i, k] + R[k, i]) / s
        q[j] = (R[j, k] + R[k, j]) / s
        qw = (R[j, i] - R[i, j]) / s
        qx, qy, qz = q
    quat = np.array([qx, qy, qz, qw])
    if quat[3] < 0:
        quat = -quat
    return quat / np.linalg.norm(quat)


def quat_to_rotmat(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Unit quaternion to 3x3 rotation matrix; normalizes its input."""
    q = np.array([qx, qy, qz, qw], dtype=float)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    x, y, z, w = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
