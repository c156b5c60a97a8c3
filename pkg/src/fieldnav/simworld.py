"""Ground-truth world model, planar UAV kinematics, and raycast lidar.

The world is a dense cell grid loaded from an ASCII file. Crop cells are
traversable and invisible to the lidar (the rangefinder sees walls and
obstacles only); the downward camera model in `cropsense` is what senses
crops. All operations here are pure given an RNG handle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from . import _kernels

TWO_PI = 2.0 * math.pi


class CellKind(IntEnum):
    FREE = 0
    OBSTACLE = 1
    CROP_BROWN = 2
    CROP_YELLOW = 3
    CROP_HEALTHY = 4


GLYPH_TO_CELL = {
    ".": CellKind.FREE,
    "#": CellKind.OBSTACLE,
    "B": CellKind.CROP_BROWN,
    "Y": CellKind.CROP_YELLOW,
    "H": CellKind.CROP_HEALTHY,
}
CELL_TO_GLYPH = {v: k for k, v in GLYPH_TO_CELL.items()}

CROP_KINDS = (CellKind.CROP_BROWN, CellKind.CROP_YELLOW, CellKind.CROP_HEALTHY)


class WorldFormatError(ValueError):
    """World-file parse failure; carries the 1-based line and column."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + loc)


class PoseInObstacleError(ValueError):
    """Raised when a sensor or kinematics query starts inside an obstacle."""


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle."""
    r = np.mod(np.asarray(a, dtype=np.float64) + np.pi, TWO_PI) - np.pi
    r[r <= -np.pi] += TWO_PI
    return r


@dataclass(frozen=True)
class Pose:
    """Planar pose with altitude. yaw is normalized to (-pi, pi] on creation."""

    x: float
    y: float
    yaw: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Twist:
    """Body-frame velocity command (vx, vy in m/s, omega in rad/s, vz in m/s)."""

    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0
    vz: float = 0.0


@dataclass(frozen=True)
class LidarConfig:
    """Beam layout and noise of the simulated rangefinder.

    The default 360 beams at 1 degree spacing start at -pi + increment/2 so
    the fan is symmetric about the x-axis.
    """

    beam_count: int = 360
    angle_increment: float = TWO_PI / 360.0
    angle_min: float = -math.pi + math.pi / 360.0
    range_max: float = 10.0
    sigma_r: float = 0.01

    def angles(self) -> np.ndarray:
        """Beam angles relative to the body x-axis."""
        return self.angle_min + self.angle_increment * np.arange(self.beam_count)


@dataclass
class LaserScan:
    angle_min: float
    angle_increment: float
    ranges: np.ndarray
    range_max: float
    pose_stamp: Pose
    seq: int = 0

    def angles(self) -> np.ndarray:
        return self.angle_min + self.angle_increment * np.arange(len(self.ranges))

    def hit_mask(self) -> np.ndarray:
        """True for beams that returned (range strictly below range_max)."""
        return self.ranges < self.range_max


@dataclass
class World:
    """Dense ground-truth grid. cells[y, x] is a CellKind value."""

    width: int
    height: int
    resolution: float
    cells: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    _obstacle_mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("world must be at least 1x1")
        if self.cells.shape != (self.height, self.width):
            raise ValueError("cells shape does not match width/height")

    @property
    def obstacle_mask(self) -> np.ndarray:
        if self._obstacle_mask is None:
            self._obstacle_mask = self.cells == CellKind.OBSTACLE
        return self._obstacle_mask

    @property
    def crop_mask(self) -> np.ndarray:
        return (self.cells >= CellKind.CROP_BROWN) & (self.cells <= CellKind.CROP_HEALTHY)

    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) in world meters."""
        ox, oy = self.origin
        return (ox, oy, ox + self.width * self.resolution,
                oy + self.height * self.resolution)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        ox, oy = self.origin
        return (int(math.floor((x - ox) / self.resolution)),
                int(math.floor((y - oy) / self.resolution)))

    def cell_center(self, cx: int, cy: int) -> tuple[float, float]:
        ox, oy = self.origin
        return (ox + (cx + 0.5) * self.resolution,
                oy + (cy + 0.5) * self.resolution)

    def in_bounds(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.extent()
        return x0 <= x < x1 and y0 <= y < y1

    def cell_kind(self, cx: int, cy: int) -> CellKind:
        return CellKind(self.cells[cy, cx])


def load_world(text: str) -> World:
    """Parse a world file.

    Format: `resolution <float>` on the first content line, optional
    `origin <x> <y>`, then H rows of glyphs (`.` `#` `B` `Y` `H`). The first
    grid row is the row with the largest y index. Blank lines and lines
    starting with `%` are ignored.
    """
    resolution = None
    origin = (0.0, 0.0)
    rows: list[str] = []
    row_lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line or line.lstrip().startswith("%"):
            continue
        parts = line.split()
        if resolution is None:
            if parts[0] != "resolution" or len(parts) != 2:
                raise WorldFormatError("expected 'resolution <float>' header", lineno)
            try:
                resolution = float(parts[1])
            except ValueError:
                raise WorldFormatError(f"invalid resolution {parts[1]!r}", lineno) from None
            if resolution <= 0 or not math.isfinite(resolution):
                raise WorldFormatError(f"resolution must be positive, got {parts[1]}", lineno)
            continue
        if not rows and parts[0] == "origin":
            if len(parts) != 3:
                raise WorldFormatError("expected 'origin <x> <y>'", lineno)
            try:
                origin = (float(parts[1]), float(parts[2]))
            except ValueError:
                raise WorldFormatError("invalid origin coordinates", lineno) from None
            continue
        rows.append(line)
        row_lines.append(lineno)

    if resolution is None:
        raise WorldFormatError("missing 'resolution' header", 1)
    if not rows:
        raise WorldFormatError("world has no grid rows", row_lines[-1] if row_lines else 1)

    width = len(rows[0])
    grid = np.zeros((len(rows), width), dtype=np.uint8)
    for r, (row, lineno) in enumerate(zip(rows, row_lines)):
        if len(row) != width:
            raise WorldFormatError(
                f"ragged grid: row {r + 1} has width {len(row)}, expected {width}",
                lineno)
        for c, glyph in enumerate(row):
            kind = GLYPH_TO_CELL.get(glyph)
            if kind is None:
                raise WorldFormatError(f"unknown glyph {glyph!r}", lineno, c + 1)
            # first text row is the top of the map (largest y index)
            grid[len(rows) - 1 - r, c] = kind
    return World(width=width, height=len(rows), resolution=resolution,
                 cells=grid, origin=origin)


def serialize_world(world: World) -> str:
    """Inverse of load_world (round-trips exactly)."""
    lines = [f"resolution {world.resolution!r}",
             f"origin {world.origin[0]!r} {world.origin[1]!r}"]
    for y in range(world.height - 1, -1, -1):
        lines.append("".join(CELL_TO_GLYPH[CellKind(k)] for k in world.cells[y]))
    return "\n".join(lines) + "\n"


def step_kinematics(pose: Pose, cmd: Twist, dt: float) -> Pose:
    """Exact constant-twist integration over dt.

    Body-frame (vx, vy) rotate with yaw while omega is applied, so the closed
    form is an arc; for |omega| below 1e-9 the straight-line limit is used.
    Altitude integrates vz and clamps at ground level.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    c0, s0 = math.cos(pose.yaw), math.sin(pose.yaw)
    if abs(cmd.omega) < 1e-9:
        dx = (cmd.vx * c0 - cmd.vy * s0) * dt
        dy = (cmd.vx * s0 + cmd.vy * c0) * dt
        yaw1 = pose.yaw + cmd.omega * dt
    else:
        yaw1 = pose.yaw + cmd.omega * dt
        c1, s1 = math.cos(yaw1), math.sin(yaw1)
        dx = (cmd.vx * (s1 - s0) + cmd.vy * (c1 - c0)) / cmd.omega
        dy = (-cmd.vx * (c1 - c0) + cmd.vy * (s1 - s0)) / cmd.omega
    return Pose(pose.x + dx, pose.y + dy, wrap_angle(yaw1),
                max(0.0, pose.z + cmd.vz * dt))


def simulate_scan(world: World, pose: Pose, cfg: LidarConfig,
                  rng: np.random.Generator, seq: int = 0) -> LaserScan:
    """Raycast one lidar revolution from pose.

    Only obstacle cells block rays. Gaussian range noise (sigma_r) applies to
    hit beams and is clamped to (0, range_max]; no-return beams report exactly
    range_max so the sentinel survives.
    """
    if not world.in_bounds(pose.x, pose.y):
        raise PoseInObstacleError(f"pose ({pose.x:.3f}, {pose.y:.3f}) outside world bounds")
    cx, cy = world.world_to_cell(pose.x, pose.y)
    if world.cells[cy, cx] == CellKind.OBSTACLE:
        raise PoseInObstacleError(f"pose ({pose.x:.3f}, {pose.y:.3f}) inside an obstacle cell")

    angles = pose.yaw + cfg.angles()
    ranges = _kernels.raycast(world.obstacle_mask, pose.x, pose.y, angles,
                              cfg.range_max, world.resolution,
                              world.origin[0], world.origin[1])
    if cfg.sigma_r > 0:
        hits = ranges < cfg.range_max
        noise = cfg.sigma_r * rng.standard_normal(int(hits.sum()))
        ranges[hits] = np.clip(ranges[hits] + noise, 1e-6, cfg.range_max)
    return LaserScan(angle_min=cfg.angle_min, angle_increment=cfg.angle_increment,
                     ranges=ranges, range_max=cfg.range_max, pose_stamp=pose, seq=seq)


def collision_check(world: World, pose: Pose, radius: float) -> bool:
    """True iff any obstacle cell intersects the disc around (pose.x, pose.y).

    Exact disc vs axis-aligned-cell test (boundary contact counts); used as
    the ground-truth safety auditor.
    """
    res = world.resolution
    ox, oy = world.origin
    cx_lo = max(0, int(math.floor((pose.x - radius - ox) / res)))
    cx_hi = min(world.width - 1, int(math.floor((pose.x + radius - ox) / res)))
    cy_lo = max(0, int(math.floor((pose.y - radius - oy) / res)))
    cy_hi = min(world.height - 1, int(math.floor((pose.y + radius - oy) / res)))
    if cx_lo > cx_hi or cy_lo > cy_hi:
        return False
    sub = world.obstacle_mask[cy_lo:cy_hi + 1, cx_lo:cx_hi + 1]
    if not sub.any():
        return False
    ys, xs = np.nonzero(sub)
    x0 = ox + (xs + cx_lo) * res
    y0 = oy + (ys + cy_lo) * res
    # closest point of each cell rectangle to the disc center
    px = np.clip(pose.x, x0, x0 + res)
    py = np.clip(pose.y, y0, y0 + res)
    d2 = (px - pose.x) ** 2 + (py - pose.y) ** 2
    return bool((d2 <= radius * radius + 1e-12).any())


# --- pose algebra and the odometry motion model -----------------------------

def relative_pose(p0: Pose, p1: Pose) -> tuple[float, float, float]:
    """(dx, dy, dyaw) of p1 expressed in p0's body frame."""
    c, s = math.cos(p0.yaw), math.sin(p0.yaw)
    wx, wy = p1.x - p0.x, p1.y - p0.y
    return (c * wx + s * wy, -s * wx + c * wy, wrap_angle(p1.yaw - p0.yaw))


def compose_pose(pose: Pose, dx: float, dy: float, dyaw: float) -> Pose:
    """Apply a body-frame displacement to pose (z carried through)."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return Pose(pose.x + c * dx - s * dy, pose.y + s * dx + c * dy,
                wrap_angle(pose.yaw + dyaw), pose.z)


def odometry_delta(p0: Pose, p1: Pose) -> tuple[float, float, float]:
    """Rot-trans-rot decomposition (rot1, trans, rot2) of the motion p0 -> p1."""
    dx, dy = p1.x - p0.x, p1.y - p0.y
    trans = math.hypot(dx, dy)
    if trans < 1e-12:
        rot1 = 0.0
    else:
        rot1 = wrap_angle(math.atan2(dy, dx) - p0.yaw)
    rot2 = wrap_angle(p1.yaw - p0.yaw - rot1)
    return (rot1, trans, rot2)


def apply_odometry(pose: Pose, delta: tuple[float, float, float]) -> Pose:
    """Noiselessly apply a rot-trans-rot delta."""
    rot1, trans, rot2 = delta
    heading = pose.yaw + rot1
    return Pose(pose.x + trans * math.cos(heading),
                pose.y + trans * math.sin(heading),
                wrap_angle(pose.yaw + rot1 + rot2), pose.z)


def sample_odometry_motion(poses: np.ndarray, delta: tuple[float, float, float],
                           alphas: tuple[float, float, float, float],
                           rng: np.random.Generator) -> np.ndarray:
    """Propagate an (n, 3) pose array through the noisy odometry model.

    Standard rot-trans-rot parameterization: each stage is perturbed by a
    zero-mean Gaussian whose *variance* mixes the commanded magnitudes with
    the alpha coefficients (alpha1 rot->rot, alpha2 trans->rot,
    alpha3 trans->trans, alpha4 rot->trans).
    """
    rot1, trans, rot2 = delta
    a1, a2, a3, a4 = alphas
    n = poses.shape[0]
    var_rot1 = a1 * rot1 * rot1 + a2 * trans * trans
    var_trans = a3 * trans * trans + a4 * (rot1 * rot1 + rot2 * rot2)
    var_rot2 = a1 * rot2 * rot2 + a2 * trans * trans
    r1 = rot1 + math.sqrt(var_rot1) * rng.standard_normal(n) if var_rot1 > 0 else np.full(n, rot1)
    tr = trans + math.sqrt(var_trans) * rng.standard_normal(n) if var_trans > 0 else np.full(n, trans)
    r2 = rot2 + math.sqrt(var_rot2) * rng.standard_normal(n) if var_rot2 > 0 else np.full(n, rot2)
    heading = poses[:, 2] + r1
    out = np.empty_like(poses)
    out[:, 0] = poses[:, 0] + tr * np.cos(heading)
    out[:, 1] = poses[:, 1] + tr * np.sin(heading)
    out[:, 2] = wrap_angles(poses[:, 2] + r1 + r2)
    return out


def make_world(width: int, height: int, resolution: float,
               origin: tuple[float, float] = (0.0, 0.0),
               fill: CellKind = CellKind.FREE) -> World:
    """Convenience constructor for fixture worlds."""
    cells = np.full((height, width), int(fill), dtype=np.uint8)
    return World(width=width, height=height, resolution=resolution,
                 cells=cells, origin=origin)


def mirror_world_x(world: World) -> World:
    """Mirror the world about the x-axis (used by the scan symmetry property)."""
    oy = world.origin[1]
    new_oy = -(oy + world.height * world.resolution)
    return replace(world, cells=world.cells[::-1].copy(),
                   origin=(world.origin[0], new_oy), _obstacle_mask=None)
