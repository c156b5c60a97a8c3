"""Online occupancy-grid SLAM: Rao-Blackwellized particle filter with
per-particle maps and hill-climbing scan matching.

Log-odds bookkeeping uses the standard inverse sensor model; the measurement
model is a likelihood field over the distance transform of occupied cells,
shared with the localization module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels
from .simworld import LaserScan, Pose, World, sample_odometry_motion, wrap_angle

L_OCC = math.log(0.7 / 0.3)
L_FREE = math.log(0.4 / 0.6)
L_CLAMP = 5.0
P_OCC_THRESH = 0.65
P_FREE_THRESH = 0.35
# log-odds equivalents of the probability thresholds
LO_OCC = math.log(P_OCC_THRESH / (1.0 - P_OCC_THRESH))
LO_FREE = math.log(P_FREE_THRESH / (1.0 - P_FREE_THRESH))

# Returns measure the distance to an obstacle cell's near face. Pushing the
# endpoint half a cell deeper along the beam puts it at the interior of the
# hit cell, so boundary returns quantize into the correct cell (not one
# short) and likelihood-field distances bottom out at the cell center.
def _hit_push(resolution: float) -> float:
    return 0.5 * resolution


@dataclass
class OccupancyGrid:
    """Dense log-odds grid; 0 = unknown prior.

    The distance field to occupied cells is cached and rebuilt lazily, only
    when a log-odds update moves some cell across the occupied threshold.
    """

    width: int
    height: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)
    logodds: np.ndarray = None
    _occ_version: int = field(default=0, repr=False, compare=False)
    _dist_cache: np.ndarray | None = field(default=None, repr=False, compare=False)
    _dist_version: int = field(default=-1, repr=False, compare=False)

    def __post_init__(self):
        if self.logodds is None:
            self.logodds = np.zeros((self.height, self.width), dtype=np.float64)
        if self.logodds.shape != (self.height, self.width):
            raise ValueError("logodds shape does not match width/height")

    def copy(self) -> "OccupancyGrid":
        g = OccupancyGrid(self.width, self.height, self.resolution, self.origin,
                          self.logodds.copy())
        g._occ_version = self._occ_version
        g._dist_cache = self._dist_cache
        g._dist_version = self._dist_version
        return g

    def probabilities(self) -> np.ndarray:
        return 1.0 - 1.0 / (1.0 + np.exp(self.logodds))

    def occupied_mask(self) -> np.ndarray:
        return self.logodds > LO_OCC

    def free_mask(self) -> np.ndarray:
        return self.logodds < LO_FREE

    def unknown_mask(self) -> np.ndarray:
        return ~(self.occupied_mask() | self.free_mask())

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((x - self.origin[0]) / self.resolution)),
                int(math.floor((y - self.origin[1]) / self.resolution)))

    def cell_center(self, cx: int, cy: int) -> tuple[float, float]:
        return (self.origin[0] + (cx + 0.5) * self.resolution,
                self.origin[1] + (cy + 0.5) * self.resolution)

    def in_bounds_cell(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height

    def distance_field(self) -> np.ndarray:
        """Distance (meters) from every cell to the nearest occupied cell."""
        if self._dist_cache is None or self._dist_version != self._occ_version:
            occ = self.occupied_mask()
            if occ.any():
                self._dist_cache = (
                    ndimage.distance_transform_edt(~occ) * self.resolution)
            else:
                self._dist_cache = np.full(occ.shape, np.inf)
            self._dist_version = self._occ_version
        return self._dist_cache


def grid_from_world(world: World, clamp: float = L_CLAMP) -> OccupancyGrid:
    """Ground-truth grid: obstacles at +clamp, everything else at -clamp."""
    lo = np.where(world.obstacle_mask, clamp, -clamp).astype(np.float64)
    return OccupancyGrid(world.width, world.height, world.resolution,
                         world.origin, lo)


def _beam_endpoints(pose: Pose, scan: LaserScan,
                    push: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame endpoints of all beams (pushed along the beam), plus hits."""
    angles = pose.yaw + scan.angles()
    r = scan.ranges + push
    ex = pose.x + r * np.cos(angles)
    ey = pose.y + r * np.sin(angles)
    return ex, ey, scan.hit_mask()


def integrate_scan(grid: OccupancyGrid, pose: Pose, scan: LaserScan) -> OccupancyGrid:
    """Fold one scan into the grid (in place; the grid is also returned).

    Cells traversed by each beam get L_FREE, hit endpoints get L_OCC;
    no-return beams update traversed cells only. Beams leaving the grid are
    truncated at the boundary.
    """
    ex, ey, hits = _beam_endpoints(pose, scan, _hit_push(grid.resolution))
    ox, oy = grid.origin
    res = grid.resolution
    cx0, cy0 = grid.world_to_cell(pose.x, pose.y)
    end_cx = np.floor((ex - ox) / res).astype(np.int64)
    end_cy = np.floor((ey - oy) / res).astype(np.int64)
    changed = _kernels.integrate_beams(grid.logodds, cx0, cy0, end_cx, end_cy,
                                       hits, L_FREE, L_OCC, L_CLAMP, LO_OCC)
    if changed:
        grid._occ_version += 1
    return grid


def _decimated_rel_endpoints(scan: LaserScan, decimation: int,
                             push: float) -> tuple[np.ndarray, np.ndarray]:
    """Body-frame endpoints of every decimation-th hit beam."""
    idx = np.arange(0, len(scan.ranges), decimation)
    idx = idx[scan.ranges[idx] < scan.range_max]
    angles = scan.angle_min + scan.angle_increment * idx
    r = scan.ranges[idx] + push
    return r * np.cos(angles), r * np.sin(angles)


def scan_likelihood(grid: OccupancyGrid, pose: Pose, scan: LaserScan,
                    sigma_hit: float = 0.2, z_floor: float = 1e-3,
                    decimation: int = 4) -> float:
    """Likelihood-field log score: sum over decimated hit beams of
    log(N(d; 0, sigma_hit) + z_floor), d = endpoint distance to the nearest
    occupied cell. Finite for every input; no-return beams are skipped.
    """
    rel_x, rel_y = _decimated_rel_endpoints(scan, decimation,
                                            _hit_push(grid.resolution))
    return float(_kernels.likelihood_score(
        grid.distance_field(), grid.resolution, grid.origin[0], grid.origin[1],
        pose.x, pose.y, pose.yaw, rel_x, rel_y, sigma_hit, z_floor))


def scan_match(grid: OccupancyGrid, scan: LaserScan, seed_pose: Pose,
               sigma_hit: float = 0.2, z_floor: float = 1e-3,
               decimation: int = 4, lin_step: float = 0.05,
               ang_step: float = 0.02, halvings: int = 6,
               max_sweeps: int = 30, prior_sigma_xy: float = 0.15,
               prior_sigma_yaw: float = 0.1) -> tuple[Pose, float]:
    """Refine seed_pose by greedy coordinate descent on the likelihood field.

    A Gaussian prior around the seed (odometry proposal) breaks ties on the
    cell-quantized likelihood plateau; set the prior sigmas to 0 for a pure
    likelihood climb. Returns (pose, score) with score >= the seed's score;
    on a featureless map the seed comes back unchanged.
    """
    rel_x, rel_y = _decimated_rel_endpoints(scan, decimation,
                                            _hit_push(grid.resolution))
    inv2var_xy = 0.5 / (prior_sigma_xy ** 2) if prior_sigma_xy > 0 else 0.0
    inv2var_yaw = 0.5 / (prior_sigma_yaw ** 2) if prior_sigma_yaw > 0 else 0.0
    x, y, yaw, score = _kernels.scan_match(
        grid.distance_field(), grid.resolution, grid.origin[0], grid.origin[1],
        seed_pose.x, seed_pose.y, seed_pose.yaw, rel_x, rel_y,
        sigma_hit, z_floor, lin_step, ang_step, halvings, max_sweeps,
        inv2var_xy, inv2var_yaw)
    return Pose(x, y, wrap_angle(yaw), seed_pose.z), float(score)


@dataclass
class SlamParticle:
    pose: Pose
    weight: float
    map: OccupancyGrid
    trajectory: list[Pose] = field(default_factory=list)


@dataclass
class SlamConfig:
    """RBPF parameters. alphas follow the rot-trans-rot odometry noise model."""

    n_particles: int = 30
    resample_threshold: float = 0.5
    alphas: tuple[float, float, float, float] = (0.05, 0.05, 0.05, 0.05)
    sigma_hit: float = 0.2
    z_floor: float = 1e-3
    decimation: int = 4
    lin_step: float = 0.05
    ang_step: float = 0.02
    halvings: int = 6
    match_prior_sigma_xy: float = 0.15
    match_prior_sigma_yaw: float = 0.1
    keep_trajectory: bool = False


@dataclass
class RbpfResult:
    particles: list[SlamParticle]
    n_eff: float
    resampled: bool
    degenerate: bool


def init_particles(n: int, pose: Pose, grid_factory) -> list[SlamParticle]:
    """n particles at a common start pose, each owning an independent map."""
    return [SlamParticle(pose=pose, weight=1.0 / n, map=grid_factory())
            for _ in range(n)]


def low_variance_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling; returns selected indices (len = len(weights))."""
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0  # guard against round-off
    return np.searchsorted(cumulative, positions).astype(np.int64)


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(np.square(weights)))


def rbpf_update(particles: list[SlamParticle],
                odom_delta: tuple[float, float, float],
                scan: LaserScan, cfg: SlamConfig,
                rng: np.random.Generator) -> RbpfResult:
    """One SLAM step: propagate, scan-match, reweight, map, maybe resample.

    odom_delta is the (rot1, trans, rot2) odometry decomposition since the
    previous update. Weights are renormalized in log space so large score
    spreads cannot underflow; a fully degenerate weight vector resets to
    uniform and flags the degeneracy for the mission layer.
    """
    n = len(particles)
    poses = np.array([[p.pose.x, p.pose.y, p.pose.yaw] for p in particles])
    proposed = sample_odometry_motion(poses, odom_delta, cfg.alphas, rng)

    log_w = np.empty(n)
    for i, p in enumerate(particles):
        seed = Pose(proposed[i, 0], proposed[i, 1], proposed[i, 2], p.pose.z)
        refined, _ = scan_match(
            p.map, scan, seed, cfg.sigma_hit, cfg.z_floor, cfg.decimation,
            cfg.lin_step, cfg.ang_step, cfg.halvings,
            prior_sigma_xy=cfg.match_prior_sigma_xy,
            prior_sigma_yaw=cfg.match_prior_sigma_yaw)
        lik = scan_likelihood(p.map, refined, scan, cfg.sigma_hit,
                              cfg.z_floor, cfg.decimation)
        log_w[i] = math.log(max(p.weight, 1e-300)) + lik
        p.pose = refined
        if cfg.keep_trajectory:
            p.trajectory.append(refined)
        integrate_scan(p.map, refined, scan)

    degenerate = False
    finite = np.isfinite(log_w)
    if not finite.any():
        weights = np.full(n, 1.0 / n)
        degenerate = True
    else:
        shifted = np.where(finite, log_w - log_w[finite].max(), -np.inf)
        weights = np.exp(shifted)
        total = weights.sum()
        if total <= 0 or not np.isfinite(total):
            weights = np.full(n, 1.0 / n)
            degenerate = True
        else:
            weights /= total

    n_eff = effective_sample_size(weights)
    resampled = False
    if n_eff < cfg.resample_threshold * n:
        idx = low_variance_resample(weights, rng)
        survivors = []
        used: dict[int, int] = {}
        for j in idx:
            j = int(j)
            src = particles[j]
            if j in used:
                survivors.append(SlamParticle(
                    pose=src.pose, weight=1.0 / n, map=src.map.copy(),
                    trajectory=list(src.trajectory)))
            else:
                used[j] = 1
                src.weight = 1.0 / n
                survivors.append(src)
        particles = survivors
        weights = np.full(n, 1.0 / n)
        resampled = True
    for p, w in zip(particles, weights):
        p.weight = float(w)
    return RbpfResult(particles=particles, n_eff=n_eff,
                      resampled=resampled, degenerate=degenerate)


def best_map(particles: list[SlamParticle]) -> OccupancyGrid:
    """Map of the highest-weight particle; ties go to the lowest index."""
    if not particles:
        raise ValueError("empty particle set")
    best = max(range(len(particles)), key=lambda i: (particles[i].weight, -i))
    return particles[best].map


def best_particle(particles: list[SlamParticle]) -> SlamParticle:
    if not particles:
        raise ValueError("empty particle set")
    idx = max(range(len(particles)), key=lambda i: (particles[i].weight, -i))
    return particles[idx]


# --- PGM export --------------------------------------------------------------

PGM_FREE = 254
PGM_OCCUPIED = 0
PGM_UNKNOWN = 205


def grid_to_pgm_bytes(grid: OccupancyGrid) -> bytes:
    """Binary PGM (P5), one byte per cell, top row = max y."""
    img = np.full((grid.height, grid.width), PGM_UNKNOWN, dtype=np.uint8)
    img[grid.free_mask()] = PGM_FREE
    img[grid.occupied_mask()] = PGM_OCCUPIED
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    return header + img[::-1].tobytes()


def grid_metadata_text(grid: OccupancyGrid) -> str:
    return (f"resolution {grid.resolution!r}\n"
            f"origin {grid.origin[0]!r} {grid.origin[1]!r}\n"
            f"occupied_threshold {P_OCC_THRESH!r}\n"
            f"free_threshold {P_FREE_THRESH!r}\n")


def pgm_to_grid(pgm: bytes, metadata: str) -> OccupancyGrid:
    """Rebuild an OccupancyGrid from exported PGM + metadata text."""
    parts = pgm.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h = (int(v) for v in parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)[::-1]
    meta = {}
    for line in metadata.splitlines():
        if line.strip():
            k, v = line.split(None, 1)
            meta[k] = v
    lo = np.zeros((h, w), dtype=np.float64)
    lo[img == PGM_OCCUPIED] = L_CLAMP
    lo[img == PGM_FREE] = -L_CLAMP
    origin = (0.0, 0.0)
    if "origin" in meta:
        vals = meta["origin"].split()
        origin = (float(vals[0]), float(vals[1]))
    return OccupancyGrid(w, h, float(meta["resolution"]), origin, lo)
