"""Euclidean k-means: k-means++ seeding and Lloyd iterations.

Points are (m, d) row arrays; center matrices are (d, K) column arrays to
match the landmark-matrix layout used by the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_LLOYD_ITERS = 300


@dataclass
class ClusterResult:
    centers: np.ndarray      # (d, K)
    assignments: np.ndarray  # (m,) int, 0-based cluster index per point
    objective: float         # sum of squared point-to-assigned-center distances
    iterations: int


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared distances, shape (m, K), from (m, d) points to (d, K) centers."""
    diff = points[:, :, None] - centers[None, :, :]
    return np.einsum("mdk,mdk->mk", diff, diff)


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Choose K of the points as initial centers by squared-distance sampling.

    First center uniform; each next one drawn with probability proportional
    to the squared distance to the nearest already-chosen center. Returns a
    (d, K) matrix of distinct point indices' coordinates.
    """
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= K <= number of points, got K={k}, m={m}")
    chosen = np.empty(k, dtype=int)
    chosen[0] = rng.integers(m)
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    taken = np.zeros(m, dtype=bool)
    taken[chosen[0]] = True
    for i in range(1, k):
        weights = np.where(taken, 0.0, d2)
        total = weights.sum()
        if total > 0:
            idx = int(rng.choice(m, p=weights / total))
        else:
            # All remaining points coincide with a chosen center; fall back
            # to a uniform draw among the untaken ones.
            idx = int(rng.choice(np.flatnonzero(~taken)))
        chosen[i] = idx
        taken[idx] = True
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].T.copy()


def lloyd(points: np.ndarray, init_centers: np.ndarray) -> ClusterResult:
    """Alternate nearest-center assignment and centroid updates to convergence.

    Stops when assignments no longer change or after MAX_LLOYD_ITERS rounds.
    Nearest-center ties break to the lowest center index. A center that loses
    all its points is reseeded at the point farthest from its assigned center.
    """
    points = np.asarray(points, dtype=float)
    centers = np.asarray(init_centers, dtype=float).copy()
    m = points.shape[0]
    k = centers.shape[1]
    assignments = np.full(m, -1, dtype=int)
    iterations = 0
    for iterations in range(1, MAX_LLOYD_ITERS + 1):
        d2 = _sq_dists(points, centers)
        new_assign = np.argmin(d2, axis=1)
        # Repair empty clusters before accepting the assignment.
        counts = np.bincount(new_assign, minlength=k)
        empties = np.flatnonzero(counts == 0)
        for c in empties:
            dist_to_own = d2[np.arange(m), new_assign]
            far = int(np.argmax(dist_to_own))
            centers[:, c] = points[far]
            d2[:, c] = np.sum((points - points[far]) ** 2, axis=1)
            new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for c in range(k):
            mask = assignments == c
            if mask.any():
                centers[:, c] = points[mask].mean(axis=0)
    d2 = _sq_dists(points, centers)
    assignments = np.argmin(d2, axis=1)
    objective = float(d2[np.arange(m), assignments].sum())
    return ClusterResult(centers, assignments, objective, iterations)
