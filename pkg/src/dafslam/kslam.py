"""Joint trajectory/landmark/association solvers with landmark-count search.

The inner solver alternates, for a fixed number of landmarks K:

  1. project every measurement into the world frame with the current poses,
  2. cluster the projections (k-means++ seeding, then Lloyd),
  3. batch-optimize poses and landmarks with the cluster assignments fixed.

It keeps the iterate with the lowest joint objective; the fresh k-means++
seeding makes the per-iteration sequence non-monotone, which is exactly what
lets it escape local minima.

The outer solver picks K by minimizing f(K) = f_inner(K) + beta * K with a
multi-resolution grid over [1, m]: probe N_K evenly spaced values, shrink to
the bracket around the best probe, repeat until the bracket is enumerated at
integer resolution.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import kmeans_pp_init, lloyd
from .factor_graph import (
    LmConfig,
    Measurements,
    SolveResult,
    compose_chain,
    landmark_term,
    odometry_cost,
    solve_fixed_associations,
)


@dataclass
class KslamConfig:
    max_iterations: int = 15
    n_k: int = 11
    beta: float | None = None  # penalty per landmark, whitened squared units
    seed: int = 0
    lm: LmConfig = field(default_factory=LmConfig)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.n_k < 3:
            raise ValueError("n_k must be >= 3")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")


# ---------------------------------------------------------------------------
# Chi-squared quantiles (regularized incomplete gamma + bisection)
# ---------------------------------------------------------------------------

def _gammainc_lower_reg(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x), series / continued fraction."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0.0:
        return 0.0
    log_prefactor = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        # Series: P(a,x) = x^a e^-x / Gamma(a) * sum_k x^k / (a (a+1) ... (a+k))
        term = 1.0 / a
        total = term
        denom = a
        for _ in range(1000):
            denom += 1.0
            term *= x / denom
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return min(1.0, math.exp(log_prefactor) * total)
    # Continued fraction (modified Lentz) for Q(a, x) = 1 - P(a, x).
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0 else 1.0 / tiny
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-17:
            break
    q = math.exp(log_prefactor) * h
    return max(0.0, 1.0 - q)


def chi2_cdf(x: float, dof: float) -> float:
    return _gammainc_lower_reg(dof / 2.0, x / 2.0)


def chi2_quantile(p: float, dof: float) -> float:
    """x with CDF_{chi2(dof)}(x) = p, by bisection on the regularized gamma."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if dof <= 0:
        raise ValueError("dof must be positive")
    lo, hi = 0.0, dof + 10.0 * math.sqrt(2.0 * dof) + 10.0
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
        if hi > 1e300:
            raise RuntimeError("chi2_quantile bracket expansion failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def beta_heuristic(d: int, n_avg_observations: float, p: float = 0.997) -> float:
    """Landmark penalty: the chi2(d*n) quantile at tail probability p.

    With n observations of one landmark, the whitened residual sum at the
    truth is chi2 with d*n degrees of freedom; beta set at its p-quantile is
    the largest residual a single landmark should plausibly absorb before
    splitting becomes preferable.
    """
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    if n_avg_observations < 1:
        raise ValueError("need at least one observation per landmark")
    return chi2_quantile(p, d * n_avg_observations)


# ---------------------------------------------------------------------------
# Inner solver (fixed K)
# ---------------------------------------------------------------------------

def inner_solve(odometry, measurements: Measurements, sigma: float, k: int,
                config: KslamConfig | None = None,
                x_init=None, rng: np.random.Generator | None = None) -> SolveResult:
    """Alternating cluster/optimize solver for a fixed landmark count K.

    Returns the iterate with the lowest joint objective across all
    alternation rounds. A failed batch optimization skips that round.
    """
    cfg = config or KslamConfig()
    m = len(measurements)
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= K <= m, got K={k}, m={m}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    x_init = x_init if x_init is not None else compose_chain(odometry)
    anchor = x_init[0]
    poses = [p.copy() for p in x_init]

    best = None
    evaluations = 0
    for _ in range(cfg.max_iterations):
        zhat = _project(poses, measurements)
        centers = kmeans_pp_init(zhat, k, rng)
        cluster = lloyd(zhat, centers)
        try:
            new_poses, landmarks, _ = solve_fixed_associations(
                odometry, measurements, cluster.assignments, sigma,
                poses, cluster.centers, anchor, cfg.lm)
        except (np.linalg.LinAlgError, ValueError, RuntimeError):
            continue  # failed round: keep the current iterate and retry
        poses = new_poses
        lm_cost, assoc = landmark_term(poses, landmarks, measurements, sigma)
        objective = odometry_cost(poses, odometry) + lm_cost
        evaluations += 1
        if best is None or objective < best.objective:
            best = SolveResult(
                trajectory=[p.copy() for p in poses],
                landmarks=landmarks.copy(),
                associations=assoc,
                objective=objective,
                iterations=cfg.max_iterations,
            )
    if best is None:
        raise RuntimeError("every alternation round failed to optimize")
    best.f_slam_evaluations = evaluations
    best.wall_time_sec = time.perf_counter() - t0
    return best


def _project(poses, measurements: Measurements) -> np.ndarray:
    from .factor_graph import project_measurements

    return project_measurements(poses, measurements)


# ---------------------------------------------------------------------------
# Outer solver (search over K)
# ---------------------------------------------------------------------------

def uniform_div(lo: int, hi: int, n: int) -> np.ndarray:
    """min(n, hi-lo+1) near-evenly spaced integers covering [lo, hi] inclusive."""
    if lo > hi:
        raise ValueError("lo must be <= hi")
    if n < 2:
        raise ValueError("n must be >= 2")
    if hi - lo + 1 <= n:
        return np.arange(lo, hi + 1)
    vals = np.unique(np.rint(np.linspace(lo, hi, n)).astype(int))
    return vals


def outer_solve(odometry, measurements: Measurements, sigma: float,
                config: KslamConfig, x_init=None,
                inner=None) -> SolveResult:
    """Multi-resolution search for the landmark count minimizing f + beta*K.

    Probes n_k values of K per level (each probe is a full inner solve from
    the odometry initial guess), keeps the best penalized objective with a
    <= comparison so later (larger) K wins ties, then shrinks to the bracket
    around the level's best probe. Stops once a level's grid enumerates its
    bracket at integer resolution. f_slam_evaluations on the returned result
    counts inner-solve invocations.
    """
    if config.beta is None:
        raise ValueError("config.beta must be set for the outer search")
    m = len(measurements)
    if m < 1:
        raise ValueError("need at least one measurement")
    inner = inner if inner is not None else inner_solve
    rng = np.random.default_rng(config.seed)
    t0 = time.perf_counter()
    x_init = x_init if x_init is not None else compose_chain(odometry)

    grid = uniform_div(1, m, config.n_k)
    f_star = np.inf
    best_result = None
    evaluations = 0
    while True:
        level_best_f = np.inf
        level_best_idx = 0
        for idx, k in enumerate(grid):
            probe_rng = np.random.default_rng(rng.integers(2**63))
            res = inner(odometry, measurements, sigma, int(k), config,
                        x_init=x_init, rng=probe_rng)
            evaluations += 1
            f_k = res.objective + config.beta * k
            if f_k <= f_star:
                f_star = f_k
                best_result = res
            if f_k <= level_best_f:
                level_best_f = f_k
                level_best_idx = idx
        if len(grid) < 2 or np.diff(grid).max() <= 1:
            break
        if level_best_idx == 0:
            lo, hi = grid[0], grid[1]
        elif level_best_idx == len(grid) - 1:
            lo, hi = grid[-2], grid[-1]
        else:
            lo, hi = grid[level_best_idx - 1], grid[level_best_idx + 1]
        grid = uniform_div(int(lo), int(hi), config.n_k)

    return SolveResult(
        trajectory=best_result.trajectory,
        landmarks=best_result.landmarks,
        associations=best_result.associations,
        objective=best_result.objective,
        iterations=best_result.iterations,
        f_slam_evaluations=evaluations,
        wall_time_sec=time.perf_counter() - t0,
    )


def solve_with_restarts(odometry, measurements: Measurements, sigma: float,
                        k: int, config: KslamConfig, restarts: int,
                        x_init=None,
                        rng: np.random.Generator | None = None) -> SolveResult:
    """Best of `restarts` independently seeded inner solves (seeds vary only)."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    best = None
    for _ in range(max(1, restarts)):
        child = np.random.default_rng(rng.integers(2**63))
        res = inner_solve(odometry, measurements, sigma, k, config,
                          x_init=x_init, rng=child)
        if best is None or res.objective < best.objective:
            best = res
    return best
