"""Adaptive (KLD-sampling) Monte-Carlo localization against a fixed map.

Particles are stored as dense arrays (poses (n, 3), weights (n,)); all updates
are vectorized. The measurement model is the same likelihood field the SLAM
module uses, so a localization run needs only an OccupancyGrid and scans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import _kernels
from .mapping import OccupancyGrid, _decimated_rel_endpoints
from .simworld import LaserScan, Pose, sample_odometry_motion, wrap_angles

DEFAULT_ALPHAS = (0.05, 0.05, 0.05, 0.05)


@dataclass
class ParticleSet:
    """Weighted pose hypotheses. Weights are kept normalized.

    degeneracy_count records how many times a measurement update collapsed
    (all weights underflowed) and was reset to uniform; it travels with the
    set so the mission layer can watch for divergence.
    """

    poses: np.ndarray            # (n, 3): x, y, yaw
    weights: np.ndarray          # (n,)
    degeneracy_count: int = 0

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.poses.ndim != 2 or self.poses.shape[1] != 3:
            raise ValueError("poses must be (n, 3)")
        if self.weights.shape != (self.poses.shape[0],):
            raise ValueError("weights length must match poses")

    def __len__(self) -> int:
        return self.poses.shape[0]


@dataclass(frozen=True)
class KldConfig:
    """KLD-sampling bound parameters and the (x, y, yaw) histogram bins."""

    epsilon: float = 0.05
    delta: float = 0.01
    bin_size_xy: float = 0.5
    bin_size_yaw: float = math.pi / 18
    n_min: int = 100
    n_max: int = 5000

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.n_min > self.n_max:
            raise ValueError("n_min must be <= n_max")

    @property
    def z_quantile(self) -> float:
        """Upper 1-delta standard-normal quantile."""
        return float(stats.norm.ppf(1.0 - self.delta))


def init_gaussian(pose: Pose, sigma_xy: float, sigma_yaw: float, n: int,
                  rng: np.random.Generator) -> ParticleSet:
    """Particles dispersed around a known start (the default initialization)."""
    poses = np.empty((n, 3))
    poses[:, 0] = pose.x + sigma_xy * rng.standard_normal(n)
    poses[:, 1] = pose.y + sigma_xy * rng.standard_normal(n)
    poses[:, 2] = wrap_angles(pose.yaw + sigma_yaw * rng.standard_normal(n))
    return ParticleSet(poses, np.full(n, 1.0 / n))


def init_uniform(grid: OccupancyGrid, n: int, rng: np.random.Generator) -> ParticleSet:
    """Global initialization: uniform over the map's free cells."""
    free = np.argwhere(grid.free_mask())
    if len(free) == 0:
        raise ValueError("map has no free cells")
    picks = free[rng.integers(0, len(free), size=n)]
    poses = np.empty((n, 3))
    poses[:, 0] = grid.origin[0] + (picks[:, 1] + rng.random(n)) * grid.resolution
    poses[:, 1] = grid.origin[1] + (picks[:, 0] + rng.random(n)) * grid.resolution
    poses[:, 2] = rng.uniform(-math.pi, math.pi, size=n)
    return ParticleSet(poses, np.full(n, 1.0 / n))


def motion_update(particles: ParticleSet, odom_delta: tuple[float, float, float],
                  alphas: tuple[float, float, float, float] = DEFAULT_ALPHAS,
                  rng: np.random.Generator | None = None) -> ParticleSet:
    """Propagate every pose through the noisy rot-trans-rot odometry model."""
    if rng is None:
        rng = np.random.default_rng()
    poses = sample_odometry_motion(particles.poses, odom_delta, alphas, rng)
    return replace(particles, poses=poses, weights=particles.weights.copy())


def measurement_update(particles: ParticleSet, grid: OccupancyGrid,
                       scan: LaserScan, sigma_hit: float = 0.2,
                       z_floor: float = 1e-3, decimation: int = 4) -> ParticleSet:
    """Reweight by the likelihood field and renormalize.

    Weights are combined in log space; if everything underflows (or the scan
    carries no information) the set resets to uniform and the degeneracy
    counter increments only in the underflow case.
    """
    rel_x, rel_y = _decimated_rel_endpoints(scan, decimation,
                                            0.5 * grid.resolution)
    n = len(particles)
    if rel_x.size == 0:
        return replace(particles, poses=particles.poses.copy(),
                       weights=particles.weights.copy())
    log_lik = _kernels.likelihood_score_batch(
        grid.distance_field(), grid.resolution, grid.origin[0], grid.origin[1],
        particles.poses, rel_x, rel_y, sigma_hit, z_floor)
    log_w = np.log(np.maximum(particles.weights, 1e-300)) + log_lik
    finite = np.isfinite(log_w)
    degenerate = False
    if finite.any():
        w = np.exp(log_w - log_w[finite].max())
        total = w.sum()
        if total > 0 and np.isfinite(total):
            w /= total
        else:
            w = np.full(n, 1.0 / n)
            degenerate = True
    else:
        w = np.full(n, 1.0 / n)
        degenerate = True
    return ParticleSet(particles.poses.copy(), w,
                       particles.degeneracy_count + int(degenerate))


def kld_sample_size(k: int, cfg: KldConfig) -> int:
    """Particle count prescribed by the K-L bound for k occupied bins.

    n = ceil((k-1)/(2 eps) * [1 - 2/(9(k-1)) + sqrt(2/(9(k-1))) * z]^3),
    clamped to [n_min, n_max]; k <= 1 degenerates to n_min.
    """
    if k <= 1:
        return cfg.n_min
    km1 = k - 1
    b = 2.0 / (9.0 * km1)
    n = math.ceil((km1 / (2.0 * cfg.epsilon)) *
                  (1.0 - b + math.sqrt(b) * cfg.z_quantile) ** 3)
    return int(min(max(n, cfg.n_min), cfg.n_max))


def _bin_ids(poses: np.ndarray, cfg: KldConfig) -> np.ndarray:
    """Histogram bin key per particle, packed collision-free into int64.

    x/y bin indices get 21 bits each (plenty for any desk-scale map), the yaw
    bin 6 bits (at the default pi/18 width there are only 36 bins).
    """
    bx = np.floor(poses[:, 0] / cfg.bin_size_xy).astype(np.int64) + (1 << 20)
    by = np.floor(poses[:, 1] / cfg.bin_size_xy).astype(np.int64) + (1 << 20)
    byaw = np.floor(poses[:, 2] / cfg.bin_size_yaw).astype(np.int64) + 32
    return (bx << 27) | (by << 6) | byaw


def kld_resample(particles: ParticleSet, cfg: KldConfig,
                 rng: np.random.Generator) -> ParticleSet:
    """Sample with replacement, growing the set until the KLD bound is met.

    Draws are taken one at a time (vectorized up front); after each draw the
    occupied-bin count k updates the target size. Output weights are uniform.
    """
    weights = particles.weights / particles.weights.sum()
    draws = rng.choice(len(particles), size=cfg.n_max, p=weights)
    ids = _bin_ids(particles.poses, cfg)[draws]
    seen: set[int] = set()
    target = cfg.n_min
    n = 0
    for n in range(1, cfg.n_max + 1):
        bid = int(ids[n - 1])
        if bid not in seen:
            seen.add(bid)
            target = kld_sample_size(len(seen), cfg)
        if n >= target and n >= cfg.n_min:
            break
    chosen = draws[:n]
    return ParticleSet(particles.poses[chosen].copy(),
                       np.full(n, 1.0 / n), particles.degeneracy_count)


def estimate(particles: ParticleSet) -> tuple[Pose, np.ndarray]:
    """Weighted mean pose (circular mean for yaw) and 3x3 covariance.

    Yaw residuals are wrapped before entering the covariance so clouds that
    straddle the +/-pi seam stay tight.
    """
    if len(particles) == 0:
        raise ValueError("empty particle set")
    w = particles.weights / particles.weights.sum()
    mx = float(w @ particles.poses[:, 0])
    my = float(w @ particles.poses[:, 1])
    sin_m = float(w @ np.sin(particles.poses[:, 2]))
    cos_m = float(w @ np.cos(particles.poses[:, 2]))
    myaw = math.atan2(sin_m, cos_m)
    res = np.empty_like(particles.poses)
    res[:, 0] = particles.poses[:, 0] - mx
    res[:, 1] = particles.poses[:, 1] - my
    res[:, 2] = wrap_angles(particles.poses[:, 2] - myaw)
    cov = (w[:, None] * res).T @ res
    return Pose(mx, my, myaw), cov


def particles_csv_rows(step: int, particles: ParticleSet) -> list[str]:
    """CSV rows (step, x, y, yaw, weight) for condensation plots."""
    return [f"{step},{float(x)!r},{float(y)!r},{float(yaw)!r},{float(wt)!r}"
            for (x, y, yaw), wt in zip(particles.poses, particles.weights)]
