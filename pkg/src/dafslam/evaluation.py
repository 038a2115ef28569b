"""Accuracy metrics: trajectory error against the known-association
reference, landmark-count error, and objective-curve probing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kslam import KslamConfig, solve_with_restarts

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ["dataset", "method", "param_name", "param_value", "trial",
               "seed", "ate_rmse", "k_est", "k_true", "runtime_sec"]


@dataclass
class EvalReport:
    method: str
    ate_rmse: float
    k_est: int
    k_true: int
    runtime_sec: float
    seed: int

    @property
    def k_delta(self) -> int:
        return self.k_est - self.k_true

    def csv_row(self, dataset: str, param_name: str, param_value, trial: int) -> dict:
        return {
            "dataset": dataset,
            "method": self.method,
            "param_name": param_name,
            "param_value": param_value,
            "trial": trial,
            "seed": self.seed,
            "ate_rmse": self.ate_rmse,
            "k_est": self.k_est,
            "k_true": self.k_true,
            "runtime_sec": self.runtime_sec,
        }


def _translations(trajectory) -> np.ndarray:
    if isinstance(trajectory, np.ndarray):
        return np.asarray(trajectory, dtype=float)
    return np.stack([p.translation for p in trajectory])


def rigid_align(source: np.ndarray, target: np.ndarray):
    """Least-squares rotation + translation (no scale) mapping source onto target."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    W = (target - mu_t).T @ (source - mu_s)
    U, _, Vt = np.linalg.svd(W)
    S = np.eye(W.shape[0])
    if np.linalg.det(U @ Vt) < 0:
        S[-1, -1] = -1.0
    R = U @ S @ Vt
    t = mu_t - R @ mu_s
    return R, t


def ate(estimate, reference, align: bool = True) -> float:
    """RMSE of translation errors, optionally after rigid alignment.

    Alignment removes the global rigid-transform ambiguity; with it on, two
    trajectories differing only by a rigid motion score exactly zero.
    """
    est = _translations(estimate)
    ref = _translations(reference)
    if est.shape != ref.shape:
        raise ValueError(f"trajectory shapes differ: {est.shape} vs {ref.shape}")
    if np.array_equal(est, ref):
        return 0.0
    if align:
        R, t = rigid_align(est, ref)
        est = est @ R.T + t
    return float(np.sqrt(np.mean(np.sum((est - ref) ** 2, axis=1))))


def landmark_count_delta(k_est: int, k_true: int) -> int:
    """Signed landmark-count error (positive means overestimation)."""
    if k_est < 1 or k_true < 1:
        raise ValueError("landmark counts must be >= 1")
    return int(k_est) - int(k_true)


def objective_curve(dataset, k_list, restarts: int,
                    config: KslamConfig | None = None):
    """Best-of-restarts inner objective per K, raw and with the beta penalty.

    Returns a list of (K, best objective, best objective + beta * K); the
    penalized entry requires config.beta.
    """
    cfg = config or KslamConfig()
    if cfg.beta is None:
        raise ValueError("config.beta must be set to compute the penalized curve")
    m = len(dataset.measurements)
    rng = np.random.default_rng(cfg.seed)
    out = []
    for k in k_list:
        if not 1 <= k <= m:
            raise ValueError(f"K={k} outside [1, {m}]")
        res = solve_with_restarts(dataset.odometry, dataset.measurements,
                                  dataset.sigma, int(k), cfg, restarts, rng=rng)
        out.append((int(k), res.objective, res.objective + cfg.beta * k))
    return out
