"""Global A* planning on an inflated costmap and dynamic-window local control.

Path costs mix geometric length with obstacle proximity: a step costs
(1 or sqrt(2)) * (1 + cost/128). Internally g-values are stored as integer
pairs (straight_sum, diagonal_sum) of the scaled units, so two searches that
find equal-cost paths report bit-identical totals (the A*-vs-Dijkstra
acceptance check is exact equality).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels
from .mapping import OccupancyGrid
from .simworld import Pose, Twist, wrap_angle

SQRT2 = math.sqrt(2.0)

COST_LETHAL = 255
COST_INSCRIBED = 254


class InvalidEndpointError(ValueError):
    """Start or goal cell is lethal/inscribed (or outside the map)."""


@dataclass
class Costmap:
    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    cost: np.ndarray  # uint8, 255 lethal, 254 inscribed, decayed below

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((x - self.origin[0]) / self.resolution)),
                int(math.floor((y - self.origin[1]) / self.resolution)))

    def cell_center(self, cx: int, cy: int) -> tuple[float, float]:
        return (self.origin[0] + (cx + 0.5) * self.resolution,
                self.origin[1] + (cy + 0.5) * self.resolution)

    def in_bounds(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height

    def clear_disc(self, x: float, y: float, radius: float) -> None:
        """Force cells within radius of (x, y) to be traversable.

        Used by the mission layer so the robot's own footprint never blocks
        planning when map noise inflates the cell it stands on.
        """
        cx, cy = self.world_to_cell(x, y)
        r = int(math.ceil(radius / self.resolution))
        x0, x1 = max(0, cx - r), min(self.width - 1, cx + r)
        y0, y1 = max(0, cy - r), min(self.height - 1, cy + r)
        for yy in range(y0, y1 + 1):
            for xx in range(x0, x1 + 1):
                dx, dy = xx - cx, yy - cy
                if dx * dx + dy * dy <= r * r and self.cost[yy, xx] >= COST_INSCRIBED:
                    self.cost[yy, xx] = 0


def inflate(grid: OccupancyGrid, robot_radius: float, decay_radius: float,
            treat_unknown_as_lethal: bool = True) -> Costmap:
    """Build a costmap from an occupancy grid.

    Lethal sources are occupied cells (plus unknown cells when the flag is
    set). Costs: 255 at sources, 254 within robot_radius, then
    round(253 * exp(-3 (d - robot_radius) / decay_radius)) out to
    robot_radius + decay_radius, 0 beyond. Distances are the exact Euclidean
    transform between cell centers, in meters.
    """
    lethal = grid.occupied_mask()
    if treat_unknown_as_lethal:
        lethal = lethal | grid.unknown_mask()
    cost = np.zeros(lethal.shape, dtype=np.uint8)
    if lethal.any():
        d = ndimage.distance_transform_edt(~lethal) * grid.resolution
        k = 3.0 / decay_radius
        with np.errstate(under="ignore"):
            decayed = np.rint(253.0 * np.exp(-k * (d - robot_radius)))
        band = (d > robot_radius) & (d < robot_radius + decay_radius)
        cost[band] = decayed[band].astype(np.uint8)
        cost[(d > 0) & (d <= robot_radius)] = COST_INSCRIBED
        cost[lethal] = COST_LETHAL
    return Costmap(grid.width, grid.height, grid.resolution, grid.origin, cost)


@dataclass
class Path:
    cells: list[tuple[int, int]]
    points: list[tuple[float, float]]     # world-frame polyline (cell centers)
    total_cost: float
    # exact scaled units: straight steps and diagonal steps of (128 + cost)
    cost_units: tuple[int, int] = (0, 0)

    def __len__(self) -> int:
        return len(self.cells)


# 8-connected moves: (dx, dy, diagonal?)
_MOVES = ((1, 0, False), (-1, 0, False), (0, 1, False), (0, -1, False),
          (1, 1, True), (1, -1, True), (-1, 1, True), (-1, -1, True))


def _octile(ax: int, ay: int, bx: int, by: int) -> float:
    dx, dy = abs(ax - bx), abs(ay - by)
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def _units_to_cost(straight: int, diagonal: int) -> float:
    return (straight + diagonal * SQRT2) / 128.0


def plan_astar(costmap: Costmap, start: tuple[int, int],
               goal: tuple[int, int]) -> Path | None:
    """Minimum-cost 8-connected path from start to goal cells.

    Step cost is (1 or sqrt(2)) * (1 + cost(target)/128); octile distance is
    the (admissible) heuristic. Ties break deterministically on
    (f, h, cell index). Returns None when the goal is unreachable; raises
    InvalidEndpointError when either endpoint is lethal or out of bounds.
    """
    w, h = costmap.width, costmap.height
    for name, (cx, cy) in (("start", start), ("goal", goal)):
        if not costmap.in_bounds(cx, cy):
            raise InvalidEndpointError(f"{name} cell {cx, cy} outside costmap")
        if costmap.cost[cy, cx] >= COST_INSCRIBED:
            raise InvalidEndpointError(
                f"{name} cell {cx, cy} has cost {costmap.cost[cy, cx]}")

    sx, sy = start
    gx, gy = goal
    cost = costmap.cost
    start_id = sy * w + sx
    goal_id = gy * w + gx
    # g-values as exact integer unit pairs; g_f is the float image for ordering
    g_units: dict[int, tuple[int, int]] = {start_id: (0, 0)}
    g_f = {start_id: 0.0}
    parent: dict[int, int] = {}
    h0 = _octile(sx, sy, gx, gy)
    open_heap = [(h0, h0, start_id)]
    closed = set()
    while open_heap:
        f, _, cur = heapq.heappop(open_heap)
        if cur in closed:
            continue
        if cur == goal_id:
            break
        closed.add(cur)
        cx, cy = cur % w, cur // w
        cur_units = g_units[cur]
        for dx, dy, diag in _MOVES:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            c = cost[ny, nx]
            if c >= COST_INSCRIBED:
                continue
            nid = ny * w + nx
            if nid in closed:
                continue
            step = 128 + int(c)
            units = (cur_units[0], cur_units[1] + step) if diag else \
                (cur_units[0] + step, cur_units[1])
            ng = _units_to_cost(*units)
            if ng < g_f.get(nid, math.inf):
                g_units[nid] = units
                g_f[nid] = ng
                parent[nid] = cur
                hn = _octile(nx, ny, gx, gy)
                heapq.heappush(open_heap, (ng + hn, hn, nid))
    if goal_id not in g_units or (goal_id != start_id and goal_id not in parent):
        return None

    cells = []
    node = goal_id
    while True:
        cells.append((node % w, node // w))
        if node == start_id:
            break
        node = parent[node]
    cells.reverse()
    units = g_units[goal_id]
    return Path(cells=cells,
                points=[costmap.cell_center(cx, cy) for cx, cy in cells],
                total_cost=_units_to_cost(*units), cost_units=units)


def dijkstra_costs(costmap: Costmap, start: tuple[int, int],
                   allow_start_anywhere: bool = True) -> np.ndarray:
    """Single-source minimum path cost to every cell (inf where unreachable).

    Same step-cost law as plan_astar, flooded over the whole grid in one call
    (vectorized sparse graph + compiled Dijkstra). The start cell may sit on
    inscribed cost: the robot can always leave its own footprint.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra as _sp_dijkstra

    w, h = costmap.width, costmap.height
    sx, sy = start
    if not costmap.in_bounds(sx, sy):
        raise InvalidEndpointError(f"start cell {start} outside costmap")
    if not allow_start_anywhere and costmap.cost[sy, sx] >= COST_INSCRIBED:
        raise InvalidEndpointError(f"start cell {start} is lethal")
    cost = costmap.cost
    idx = np.arange(h * w, dtype=np.int32).reshape(h, w)
    rows, cols, weights = [], [], []
    for dx, dy, diag in _MOVES:
        src_y = slice(max(0, -dy), h - max(0, dy))
        src_x = slice(max(0, -dx), w - max(0, dx))
        dst_y = slice(max(0, dy), h + min(0, dy))
        dst_x = slice(max(0, dx), w + min(0, dx))
        src = idx[src_y, src_x]
        dst = idx[dst_y, dst_x]
        target_cost = cost[dst_y, dst_x]
        ok = target_cost < COST_INSCRIBED
        length = SQRT2 if diag else 1.0
        rows.append(src[ok])
        cols.append(dst[ok])
        weights.append(length * (1.0 + target_cost[ok] / 128.0))
    graph = coo_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
        shape=(h * w, h * w)).tocsr()
    dist = _sp_dijkstra(graph, directed=True, indices=sy * w + sx)
    return dist.reshape(h, w)


@dataclass
class DwaConfig:
    """Dynamic-window sampling and objective parameters."""

    v_max: float = 1.0
    allow_vy: bool = False           # arcs only while path-following
    omega_max: float = 1.5
    accel_v: float = 1.0
    accel_omega: float = 3.0
    sim_horizon: float = 1.5
    dt_traj: float = 0.1
    dt_control: float = 0.05         # window = velocities reachable in one period
    n_v: int = 11
    n_omega: int = 21
    w_heading: float = 0.8
    w_clearance: float = 0.1
    w_velocity: float = 0.1
    robot_radius: float = 0.3
    safety_margin: float = 0.1       # extra body radius used for clearance
    clearance_cap: float = 2.0       # clearance normalization ceiling
    lookahead: float = 1.0           # carrot distance along the global path


def carrot_point(path: Path, pose: Pose, lookahead: float) -> tuple[float, float]:
    """First path point at least `lookahead` meters from the pose.

    Walks forward from the point nearest the robot; falls back to the final
    waypoint when the remaining path is shorter than the lookahead.
    """
    pts = path.points
    d2 = [(px - pose.x) ** 2 + (py - pose.y) ** 2 for px, py in pts]
    start = int(np.argmin(d2))
    la2 = lookahead * lookahead
    for i in range(start, len(pts)):
        if d2[i] >= la2:
            return pts[i]
    return pts[-1]


def _rollout(v: np.ndarray, omega: np.ndarray, pose: Pose,
             cfg: DwaConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arc trajectories for every (v, omega) pair.

    Returns xs, ys of shape (n_pairs, n_steps) and the end headings.
    """
    steps = max(1, int(round(cfg.sim_horizon / cfg.dt_traj)))
    t = cfg.dt_traj * np.arange(1, steps + 1)
    th = pose.yaw + omega[:, None] * t[None, :]
    small = np.abs(omega) < 1e-9
    xs = np.empty((len(v), steps))
    ys = np.empty((len(v), steps))
    if small.any():
        xs[small] = pose.x + (v[small, None] * t[None, :]) * math.cos(pose.yaw)
        ys[small] = pose.y + (v[small, None] * t[None, :]) * math.sin(pose.yaw)
    big = ~small
    if big.any():
        w_ = omega[big, None]
        r = v[big, None] / w_
        xs[big] = pose.x + r * (np.sin(th[big]) - math.sin(pose.yaw))
        ys[big] = pose.y - r * (np.cos(th[big]) - math.cos(pose.yaw))
    return xs, ys, th[:, -1]


def dwa_command(pose: Pose, vel: Twist, global_path: Path,
                local_obstacles: np.ndarray, cfg: DwaConfig) -> Twist | None:
    """Sample the dynamic window and return the best admissible (v, omega).

    dist(v, omega) is the arc length travelled before the body (robot radius
    plus safety margin) first touches an obstacle point; a pair is admissible
    iff v <= sqrt(2 a_v dist). The objective blends heading to the carrot,
    clearance, and velocity, each min-max normalized over the admissible set.
    Returns None (Stop) when no pair is admissible.
    """
    if len(global_path.points) == 0:
        raise ValueError("global_path is empty")
    obstacles = np.asarray(local_obstacles, dtype=float).reshape(-1, 2)

    v_lo = max(0.0, vel.vx - cfg.accel_v * cfg.dt_control)
    v_hi = min(cfg.v_max, vel.vx + cfg.accel_v * cfg.dt_control)
    w_lo = max(-cfg.omega_max, vel.omega - cfg.accel_omega * cfg.dt_control)
    w_hi = min(cfg.omega_max, vel.omega + cfg.accel_omega * cfg.dt_control)
    vs = np.linspace(v_lo, v_hi, cfg.n_v)
    ws = np.linspace(w_lo, w_hi, cfg.n_omega)
    v_grid, w_grid = np.meshgrid(vs, ws, indexing="ij")
    v_flat, w_flat = v_grid.ravel(), w_grid.ravel()

    xs, ys, end_heading = _rollout(v_flat, w_flat, pose, cfg)
    body = cfg.robot_radius + cfg.safety_margin

    if len(obstacles) > 0:
        # points beyond reach + cap cannot change the capped objective
        reach = cfg.v_max * cfg.sim_horizon + body + cfg.clearance_cap
        d0 = np.hypot(obstacles[:, 0] - pose.x, obstacles[:, 1] - pose.y)
        obstacles = obstacles[d0 <= reach]
    if len(obstacles) == 0:
        dist_to_hit = np.full(len(v_flat), np.inf)
        min_clear = np.full(len(v_flat), cfg.clearance_cap)
    else:
        dist_to_hit, min_clear = _kernels.dwa_clearance(
            xs, ys, v_flat, np.ascontiguousarray(obstacles, dtype=np.float64),
            body, cfg.robot_radius, cfg.clearance_cap, cfg.dt_traj)

    with np.errstate(invalid="ignore"):
        admissible = v_flat <= np.sqrt(2.0 * cfg.accel_v * dist_to_hit) + 1e-12
    if not admissible.any():
        return None

    carrot = carrot_point(global_path, pose, cfg.lookahead)
    bearing = np.arctan2(carrot[1] - ys[:, -1], carrot[0] - xs[:, -1])
    err = np.abs(np.arctan2(np.sin(bearing - end_heading),
                            np.cos(bearing - end_heading)))
    # absolute [0, 1] scales: bearing error against pi, clearance against its
    # cap, velocity against v_max. Window-relative (min-max) scaling is a
    # deadlock trap: with near-equal clearances it inflates noise to full
    # weight and "stand still" outscores every admissible move.
    heading_n = 1.0 - err / math.pi
    clear_n = min_clear / cfg.clearance_cap
    vel_n = v_flat / cfg.v_max if cfg.v_max > 0 else np.zeros_like(v_flat)

    score = (cfg.w_heading * heading_n + cfg.w_clearance * clear_n
             + cfg.w_velocity * vel_n)[admissible]
    cand_v = v_flat[admissible]
    cand_w = w_flat[admissible]
    # max score; ties prefer lower |omega|, then lower v
    order = np.lexsort((cand_v, np.abs(cand_w), -score))
    best = order[0]
    return Twist(vx=float(cand_v[best]), vy=0.0, omega=float(cand_w[best]),
                 vz=0.0)


def braking_rollout(pose: Pose, cmd: Twist, cfg: DwaConfig,
                    dt: float = 0.01) -> list[Pose]:
    """Poses along "execute one control period, then brake at accel_v".

    Omega decays proportionally with v so the braking path follows the same
    arc the window evaluated. Used by the safety auditor.
    """
    from .simworld import step_kinematics

    poses = [pose]
    v, w = cmd.vx, cmd.omega
    t = 0.0
    while t < cfg.dt_control - 1e-12:
        pose = step_kinematics(pose, Twist(vx=v, omega=w), dt)
        poses.append(pose)
        t += dt
    v0 = v
    while v > 1e-9:
        v = max(0.0, v - cfg.accel_v * dt)
        w_scaled = w * (v / v0) if v0 > 1e-12 else 0.0
        if v > 0:
            pose = step_kinematics(pose, Twist(vx=v, omega=w_scaled), dt)
            poses.append(pose)
    return poses


def goal_reached(pose: Pose, goal: Pose, tol_xy: float, tol_yaw: float) -> bool:
    """True iff planar distance <= tol_xy and wrapped yaw error <= tol_yaw."""
    if math.hypot(pose.x - goal.x, pose.y - goal.y) > tol_xy:
        return False
    return abs(wrap_angle(pose.yaw - goal.yaw)) <= tol_yaw
