"""Mission orchestration: the node graph on a deterministic tick bus.

Per tick, nodes run in dataflow order: simulator (kinematics + odometry +
lidar) -> SLAM -> explore -> move-base -> altitude PID -> disease sensing ->
fusion. Phases run strictly in sequence: takeoff, frontier exploration,
boustrophedon survey of the crop area, then an optional point-to-point
navigation demo. Identical (seed, config, world) inputs produce identical
reports and artifacts byte for byte.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, cropsense, exploration, mapping, planning
from .bus import Bus
from .config import Config, config_hash
from .simworld import (
    LaserScan,
    LidarConfig,
    Pose,
    Twist,
    World,
    apply_odometry,
    collision_check,
    compose_pose,
    odometry_delta,
    relative_pose,
    simulate_scan,
    step_kinematics,
    wrap_angle,
)

TOPICS = ("scan", "tf", "map", "goal", "cmd_vel", "frontiers", "detections")

EXIT_OK = 0
EXIT_BUDGET = 2
EXIT_DEGENERATE = 3
EXIT_INPUT = 4


# --- altitude PID -------------------------------------------------------------

@dataclass
class PidState:
    kp: float
    ki: float
    kd: float
    setpoint: float
    i_max: float = 1.0
    vz_max: float = 1.0
    integral: float = 0.0
    prev_error: float = 0.0


def pid_step(state: PidState, measured_z: float, dt: float) -> float:
    """One PID update; returns the clamped vz command and mutates state."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    e = state.setpoint - measured_z
    state.integral = min(state.i_max, max(-state.i_max, state.integral + e * dt))
    derivative = (e - state.prev_error) / dt
    state.prev_error = e
    out = state.kp * e + state.ki * state.integral + state.kd * derivative
    return min(state.vz_max, max(-state.vz_max, out))


# --- bus payloads -------------------------------------------------------------

@dataclass(frozen=True)
class TfMessage:
    source: str          # "odom" or "slam"
    pose: Pose


@dataclass(frozen=True)
class GoalMessage:
    pose: Pose
    purpose: str         # "explore" | "survey" | "nav"
    unknown_lethal: bool
    tol_xy: float
    tol_yaw: float
    goal_id: int


@dataclass(frozen=True)
class DetectionsMessage:
    observations: tuple


# --- nodes --------------------------------------------------------------------

class SimNode:
    """Gazebo stand-in: exact kinematics, drifting odometry, lidar."""

    def __init__(self, world: World, cfg: Config, start: Pose,
                 rng_scan: np.random.Generator, rng_odom: np.random.Generator):
        self.world = world
        self.cfg = cfg
        self.true_pose = start
        self.odom_pose = start
        self.prev_true = start
        self.cmd = Twist()
        self.lidar = LidarConfig(beam_count=cfg.lidar_beams,
                                 angle_increment=2 * math.pi / cfg.lidar_beams,
                                 angle_min=-math.pi + math.pi / cfg.lidar_beams,
                                 range_max=cfg.lidar_range_max,
                                 sigma_r=cfg.lidar_sigma)
        self.rng_scan = rng_scan
        self.rng_odom = rng_odom
        self.scan_seq = 0
        self.last_scan: LaserScan | None = None

    def _clamp(self, cmd: Twist) -> Twist:
        c = self.cfg
        return Twist(vx=min(c.v_max, max(-c.v_max, cmd.vx)),
                     vy=min(c.v_max, max(-c.v_max, cmd.vy)),
                     omega=min(c.omega_max, max(-c.omega_max, cmd.omega)),
                     vz=min(c.vz_max, max(-c.vz_max, cmd.vz)))

    def on_tick(self, bus: Bus) -> None:
        msg = bus.latest("cmd_vel", "sim")
        if msg is not None:
            self.cmd = self._clamp(msg.payload)
        self.true_pose = step_kinematics(self.true_pose, self.cmd, self.cfg.tick_dt)

        # odometry: true relative motion corrupted by multiplicative drift
        rot1, trans, rot2 = odometry_delta(self.prev_true, self.true_pose)
        if trans > 0 or rot1 or rot2:
            c = self.cfg
            g = self.rng_odom.standard_normal(3)
            trans_n = trans * (1.0 + c.odom_noise_trans * g[0])
            srot = c.odom_noise_rot_per_m * trans
            rot1_n = rot1 * (1.0 + c.odom_noise_rot * g[1]) + srot * g[1] * 0.5
            rot2_n = rot2 * (1.0 + c.odom_noise_rot * g[2]) + srot * g[2] * 0.5
            self.odom_pose = apply_odometry(self.odom_pose, (rot1_n, trans_n, rot2_n))
        self.odom_pose = Pose(self.odom_pose.x, self.odom_pose.y,
                              self.odom_pose.yaw, self.true_pose.z)
        self.prev_true = self.true_pose
        bus.publish("tf", TfMessage("odom", self.odom_pose))

        if bus.tick % self.cfg.lidar_period == 0:
            scan = simulate_scan(self.world, self.true_pose, self.lidar,
                                 self.rng_scan, seq=self.scan_seq)
            self.scan_seq += 1
            self.last_scan = scan
            bus.publish("scan", scan)


class SlamNode:
    """RBPF SLAM consuming scans + odometry tf, publishing map + corrected tf."""

    def __init__(self, cfg: Config, world: World, start: Pose,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        res = cfg.map_resolution
        width = int(round(world.width * world.resolution / res))
        height = int(round(world.height * world.resolution / res))
        origin = world.origin
        self.slam_cfg = mapping.SlamConfig(
            n_particles=cfg.slam_particles,
            resample_threshold=cfg.slam_resample_threshold,
            alphas=cfg.slam_alphas(),
            sigma_hit=cfg.slam_sigma_hit,
            z_floor=cfg.slam_z_floor,
            decimation=cfg.slam_decimation)
        self.particles = mapping.init_particles(
            cfg.slam_particles, start,
            lambda: mapping.OccupancyGrid(width, height, res, origin))
        self.odom_by_tick: dict[int, Pose] = {}
        self.slam_pose = start
        self.odom_at_update = start
        self.latest_odom = start
        self.updates = 0
        self.resamples = 0
        self.degeneracy_count = 0
        self.frozen = False          # survey/nav phases localize on the frozen map
        self.last_neff = float(cfg.slam_particles)
        self.particle_dumps: list[tuple[int, list[str]]] = []

    def estimate(self) -> Pose:
        rel = relative_pose(self.odom_at_update, self.latest_odom)
        est = compose_pose(self.slam_pose, *rel)
        return Pose(est.x, est.y, est.yaw, self.latest_odom.z)

    def _maybe_dump(self):
        if not self.cfg.dump_particles:
            return
        if self.updates % max(1, self.cfg.particles_period) != 0:
            return
        rows = [f"{self.updates},{p.pose.x!r},{p.pose.y!r},{p.pose.yaw!r},{p.weight!r}"
                for p in self.particles]
        self.particle_dumps.append((self.updates, rows))

    def on_tick(self, bus: Bus) -> None:
        for msg in bus.poll("tf", "slam"):
            if msg.payload.source == "odom":
                self.odom_by_tick[msg.tick] = msg.payload.pose
                self.latest_odom = msg.payload.pose
        for old in [t for t in self.odom_by_tick if t < bus.tick - 8]:
            del self.odom_by_tick[old]

        for msg in bus.poll("scan", "slam"):
            odom_at_scan = self.odom_by_tick.get(msg.tick)
            if odom_at_scan is None:
                continue
            rot1, trans, rot2 = odometry_delta(self.odom_at_update, odom_at_scan)
            moved = (trans >= self.cfg.slam_linear_update
                     or abs(rot1 + rot2) >= self.cfg.slam_angular_update)
            if self.updates > 0 and not moved:
                continue
            if self.frozen:
                # localization-only: scan-match the best map, no map writes
                grid = mapping.best_map(self.particles)
                seed = compose_pose(self.slam_pose,
                                    *relative_pose(self.odom_at_update, odom_at_scan))
                refined, _ = mapping.scan_match(
                    grid, msg.payload, seed, self.slam_cfg.sigma_hit,
                    self.slam_cfg.z_floor, self.slam_cfg.decimation)
                self.slam_pose = refined
                self.odom_at_update = odom_at_scan
                continue
            result = mapping.rbpf_update(
                self.particles, (rot1, trans, rot2), msg.payload,
                self.slam_cfg, self.rng)
            self.particles = result.particles
            self.updates += 1
            self.last_neff = result.n_eff
            self.resamples += int(result.resampled)
            self.degeneracy_count += int(result.degenerate)
            best = mapping.best_particle(self.particles)
            self.slam_pose = best.pose
            self.odom_at_update = odom_at_scan
            self._maybe_dump()
            snapshot = best.map.copy()
            snapshot.logodds = best.map.logodds.copy()
            bus.publish("map", snapshot)
        bus.publish("tf", TfMessage("slam", self.estimate()))


class ExploreNode:
    """Frontier goal selection with failure blacklisting."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.blacklist = exploration.Blacklist(radius=cfg.blacklist_radius)
        self.grid: mapping.OccupancyGrid | None = None
        self.est: Pose | None = None
        self.active_goal: exploration.ExplorationGoal | None = None
        self.goal_seq = 0
        self.goals_selected = 0
        self.goals_reached = 0
        self.goals_failed = 0
        self.snapshots: list[tuple[int, list[str]]] = []

    def ingest(self, bus: Bus) -> None:
        m = bus.latest("map", "explore")
        if m is not None:
            self.grid = m.payload
        t = None
        for msg in bus.poll("tf", "explore"):
            if msg.payload.source == "slam":
                t = msg.payload.pose
        if t is not None:
            self.est = t

    def goal_still_frontier(self) -> bool:
        if self.active_goal is None or self.grid is None:
            return False
        mask = exploration.frontier_mask(self.grid)
        cx, cy = self.grid.world_to_cell(self.active_goal.pose.x,
                                         self.active_goal.pose.y)
        if not self.grid.in_bounds_cell(cx, cy):
            return False
        # the goal cell or any of its 8 neighbors still on the frontier
        x0, x1 = max(0, cx - 1), min(self.grid.width, cx + 2)
        y0, y1 = max(0, cy - 1), min(self.grid.height, cy + 2)
        return bool(mask[y0:y1, x0:x1].any())

    def report_outcome(self, reached: bool) -> None:
        if self.active_goal is None:
            return
        if reached:
            self.goals_reached += 1
        else:
            self.goals_failed += 1
            self.blacklist.record_failure(self.active_goal.cluster.centroid)
        self.active_goal = None

    def select_and_publish(self, bus: Bus) -> bool:
        """Pick a new goal and publish it; False when nothing is selectable."""
        if self.grid is None or self.est is None:
            return False
        clusters = exploration.find_frontiers(self.grid, self.cfg.frontier_min_cluster)
        clusters = [c for c in clusters if not self.blacklist.contains(c.centroid)]
        if not clusters:
            return False
        costmap = planning.inflate(self.grid, self.cfg.inscribed_radius(),
                                   self.cfg.inflation_decay_radius,
                                   treat_unknown_as_lethal=False)
        costmap.clear_disc(self.est.x, self.est.y, 1.2 * self.cfg.inscribed_radius())
        goal = exploration.select_goal(
            clusters, self.est, costmap,
            weights=(self.cfg.goal_w_dist, self.cfg.goal_w_size),
            blacklist=self.blacklist)
        if goal is None:
            # nothing reachable: charge a failure to every remaining cluster
            for c in clusters:
                self.blacklist.record_failure(c.centroid)
            return False
        self.active_goal = goal
        self.goals_selected += 1
        self.goal_seq += 1
        self.snapshots.append((self.goal_seq,
                               exploration.frontier_csv_rows(clusters)))
        bus.publish("goal", GoalMessage(
            pose=goal.pose, purpose="explore", unknown_lethal=False,
            tol_xy=self.cfg.goal_tol_xy, tol_yaw=self.cfg.goal_tol_yaw,
            goal_id=self.goal_seq))
        return True

    def done(self) -> bool:
        if self.grid is None or self.active_goal is not None:
            return False
        return exploration.exploration_done(
            self.grid, self.cfg.frontier_min_cluster, self.blacklist)


class MoveBaseNode:
    """Global A* planning + DWA velocity control toward the current goal."""

    IDLE, ACTIVE, REACHED, FAILED = "idle", "active", "reached", "failed"

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.dwa = planning.DwaConfig(
            v_max=cfg.v_max, omega_max=cfg.omega_max,
            accel_v=cfg.accel_v, accel_omega=cfg.accel_omega,
            sim_horizon=cfg.dwa_horizon, dt_traj=cfg.dwa_dt,
            dt_control=cfg.tick_dt, n_v=cfg.dwa_n_v, n_omega=cfg.dwa_n_omega,
            w_heading=cfg.dwa_w_heading, w_clearance=cfg.dwa_w_clearance,
            w_velocity=cfg.dwa_w_velocity, robot_radius=cfg.robot_radius,
            safety_margin=cfg.dwa_safety_margin,
            clearance_cap=cfg.dwa_clearance_cap, lookahead=cfg.dwa_lookahead)
        self.state = self.IDLE
        self.goal: GoalMessage | None = None
        self.grid: mapping.OccupancyGrid | None = None
        self.costmap: planning.Costmap | None = None
        self.costmap_dirty = True
        self.path: planning.Path | None = None
        self.vel = Twist()
        self.est: Pose | None = None
        self.slam_tf_by_tick: dict[int, Pose] = {}
        self.obstacles = np.empty((0, 2))
        self.stuck_ticks = 0
        self.goal_ticks = 0
        self.replan_tick = -10_000
        self.history: deque[Pose] = deque(maxlen=max(2, int(1.0 / cfg.tick_dt)))
        self.stops = 0

    def set_goal(self, goal: GoalMessage) -> None:
        self.goal = goal
        self.state = self.ACTIVE
        self.path = None
        self.stuck_ticks = 0
        self.goal_ticks = 0
        self.costmap_dirty = True
        self.history.clear()

    def cancel(self) -> None:
        self.state = self.IDLE
        self.goal = None
        self.path = None

    def _ingest(self, bus: Bus) -> None:
        for msg in bus.poll("goal", "movebase"):
            self.set_goal(msg.payload)
        m = bus.latest("map", "movebase")
        if m is not None:
            self.grid = m.payload
            self.costmap_dirty = True
        for msg in bus.poll("tf", "movebase"):
            if msg.payload.source == "slam":
                self.slam_tf_by_tick[msg.tick] = msg.payload.pose
                self.est = msg.payload.pose
        for old in [t for t in self.slam_tf_by_tick if t < bus.tick - 8]:
            del self.slam_tf_by_tick[old]
        for msg in bus.poll("scan", "movebase"):
            est = self.slam_tf_by_tick.get(msg.tick)
            if est is None:
                continue
            scan = msg.payload
            idx = np.arange(0, len(scan.ranges), self.cfg.dwa_obstacle_decimation)
            idx = idx[scan.ranges[idx] < scan.range_max]
            angles = est.yaw + scan.angle_min + scan.angle_increment * idx
            r = scan.ranges[idx]
            self.obstacles = np.column_stack([est.x + r * np.cos(angles),
                                              est.y + r * np.sin(angles)])

    def _rebuild_costmap(self) -> None:
        self.costmap = planning.inflate(
            self.grid, self.cfg.inscribed_radius(),
            self.cfg.inflation_decay_radius,
            treat_unknown_as_lethal=self.goal.unknown_lethal)
        self.costmap.clear_disc(self.est.x, self.est.y,
                                1.2 * self.cfg.inscribed_radius())
        self.costmap_dirty = False

    def _path_blocked(self) -> bool:
        if self.path is None:
            return True
        cm = self.costmap
        return any(cm.cost[cy, cx] >= planning.COST_INSCRIBED
                   for cx, cy in self.path.cells)

    def _retarget_goal_cell(self, goal_cell: tuple[int, int]) -> tuple[int, int] | None:
        """Nearest traversable cell within the goal tolerance of goal_cell.

        Map refinement can inflate the original goal cell after selection;
        moving the target inside the tolerance keeps the goal meaningful.
        """
        cm = self.costmap
        gx, gy = goal_cell
        if cm.in_bounds(gx, gy) and cm.cost[gy, gx] < planning.COST_INSCRIBED:
            return goal_cell
        r = max(1, int(math.ceil(self.goal.tol_xy / cm.resolution)))
        best = None
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                x, y = gx + dx, gy + dy
                if not cm.in_bounds(x, y) or cm.cost[y, x] >= planning.COST_INSCRIBED:
                    continue
                d2 = dx * dx + dy * dy
                if d2 <= r * r and (best is None or d2 < best[0]):
                    best = (d2, (x, y))
        return best[1] if best else None

    def _replan(self, bus: Bus) -> bool:
        start = self.costmap.world_to_cell(self.est.x, self.est.y)
        goal_cell = self._retarget_goal_cell(
            self.costmap.world_to_cell(self.goal.pose.x, self.goal.pose.y))
        self.replan_tick = bus.tick
        if goal_cell is None:
            self.path = None
            return False
        try:
            path = planning.plan_astar(self.costmap, start, goal_cell)
        except planning.InvalidEndpointError:
            path = None
        if path is None:
            self.path = None
            return False
        self.path = path
        return True

    def on_tick(self, bus: Bus) -> Twist:
        self._ingest(bus)
        if self.state != self.ACTIVE or self.goal is None:
            return Twist()
        if self.est is None or self.grid is None:
            return Twist()
        self.goal_ticks += 1
        goal = self.goal

        if planning.goal_reached(self.est, goal.pose, goal.tol_xy, goal.tol_yaw):
            self.state = self.REACHED
            self.vel = Twist()
            return Twist()
        # inside position tolerance: rotate in place to the goal yaw
        if math.hypot(self.est.x - goal.pose.x, self.est.y - goal.pose.y) <= goal.tol_xy:
            yaw_err = wrap_angle(goal.pose.yaw - self.est.yaw)
            omega = min(self.cfg.omega_max, max(-self.cfg.omega_max, 2.0 * yaw_err))
            self.vel = Twist(omega=omega)
            return self.vel

        if self.costmap_dirty:
            self._rebuild_costmap()
        replan_period = max(1, int(self.cfg.replan_period_s / self.cfg.tick_dt))
        if (self.path is None or bus.tick - self.replan_tick >= replan_period
                or self._path_blocked()):
            if not self._replan(bus) :
                self.state = self.FAILED
                self.vel = Twist()
                return Twist()

        cmd = planning.dwa_command(self.est, self.vel, self.path,
                                   self.obstacles, self.dwa)
        if cmd is None:
            self.stops += 1
            self.stuck_ticks += 1
            self.vel = Twist()
        else:
            self.vel = cmd
        # progress watchdog: neither moving nor turning over the last second
        self.history.append(self.est)
        if len(self.history) == self.history.maxlen:
            old = self.history[0]
            moved = math.hypot(self.est.x - old.x, self.est.y - old.y)
            turned = abs(wrap_angle(self.est.yaw - old.yaw))
            if moved < 0.02 and turned < 0.05:
                self.stuck_ticks += 1
            elif moved >= 0.05 or turned >= 0.2:
                self.stuck_ticks = 0
        if self.stuck_ticks > self.cfg.stuck_timeout_s / self.cfg.tick_dt:
            self.state = self.FAILED
            self.vel = Twist()
            return Twist()
        return self.vel


class CropNode:
    """Disease detector frames at the measured rate, gated by simulated time."""

    def __init__(self, cfg: Config, world: World, rng: np.random.Generator):
        profile = cropsense.measured_profile()
        self.profile = cropsense.DetectorProfile(
            rate_hz=cfg.detector_rate_hz, leaf_recall=cfg.leaf_recall,
            confusion=profile.confusion, fov_radius=cfg.fov_radius)
        self.world = world
        self.rng = rng
        self.frames = 0

    def on_tick(self, bus: Bus, true_pose: Pose, tick: int, dt: float) -> None:
        n = cropsense.frames_elapsed(self.profile.rate_hz, tick * dt,
                                     (tick + 1) * dt)
        for _ in range(n):
            self.frames += 1
            obs = cropsense.observe(self.world, true_pose, self.profile,
                                    tick, self.rng)
            bus.publish("detections", DetectionsMessage(tuple(obs)))


# --- survey sweep -------------------------------------------------------------

def survey_waypoints(grid: mapping.OccupancyGrid, dmap: cropsense.DiseaseMap,
                     cfg: Config) -> list[Pose]:
    """Boustrophedon rows over the observed crop area on the completed map.

    Rows are spaced survey_spacing apart inside the bounding box of cells
    with at least one accepted observation (expanded by survey_margin),
    clipped to traversable intervals of the navigation costmap. Falls back
    to the whole free-space box when nothing was observed yet.
    """
    costmap = planning.inflate(grid, cfg.inscribed_radius(),
                               cfg.inflation_decay_radius,
                               treat_unknown_as_lethal=True)
    observed = dmap.totals() > 0
    region = observed if observed.any() else grid.free_mask()
    if not region.any():
        return []
    ys, xs = np.nonzero(region)
    margin = int(math.ceil(cfg.survey_margin / grid.resolution))
    x0 = max(0, xs.min() - margin)
    x1 = min(grid.width - 1, xs.max() + margin)
    y0 = max(0, ys.min() - margin)
    y1 = min(grid.height - 1, ys.max() + margin)
    step = max(1, int(round(cfg.survey_spacing / grid.resolution)))
    ok = costmap.cost < planning.COST_INSCRIBED
    waypoints: list[Pose] = []
    leftward = False
    for row in range(y0, y1 + 1, step):
        cols = np.nonzero(ok[row, x0:x1 + 1])[0]
        if len(cols) < 4:
            continue
        # maximal runs of traversable cells along the row
        breaks = np.nonzero(np.diff(cols) > 1)[0]
        runs = np.split(cols, breaks + 1)
        endpoints = []
        for run in runs:
            if len(run) < 4:
                continue
            a, b = int(run[0]) + x0, int(run[-1]) + x0
            ax, ay = grid.cell_center(a + 1, row)
            bx, by = grid.cell_center(b - 1, row)
            endpoints.append((Pose(ax, ay, 0.0), Pose(bx, by, math.pi)))
        if not endpoints:
            continue
        if leftward:
            endpoints = [(b, a) for a, b in reversed(endpoints)]
        for a, b in endpoints:
            waypoints.append(a)
            waypoints.append(b)
        leftward = not leftward
    return waypoints


# --- mission report -----------------------------------------------------------

@dataclass
class MissionReport:
    seed: int
    config_hash: str
    world: dict
    exit_status: str
    ticks_total: int
    sim_time_s: float
    phases: list
    exploration: dict
    map_fidelity: dict
    slam: dict
    collisions: int
    disease: dict
    survey: dict
    nav: dict
    pid: dict
    curves: dict
    trajectory: list
    artifacts: list

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "config_hash": self.config_hash,
            "world": self.world, "exit_status": self.exit_status,
            "ticks_total": self.ticks_total, "sim_time_s": self.sim_time_s,
            "phases": self.phases, "exploration": self.exploration,
            "map_fidelity": self.map_fidelity, "slam": self.slam,
            "collisions": self.collisions, "disease": self.disease,
            "survey": self.survey, "nav": self.nav, "pid": self.pid,
            "curves": self.curves, "trajectory": self.trajectory,
            "artifacts": self.artifacts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"), allow_nan=False) + "\n"

    @property
    def exit_code(self) -> int:
        return {"ok": EXIT_OK, "budget_exhausted": EXIT_BUDGET,
                "slam_degenerate": EXIT_DEGENERATE}[self.exit_status]


# --- the runner ---------------------------------------------------------------

PHASE_TAKEOFF = "takeoff"
PHASE_EXPLORE = "explore"
PHASE_SURVEY = "survey"
PHASE_NAV = "nav"


class MissionRunner:
    def __init__(self, world: World, cfg: Config, seed: int):
        self.world = world
        self.cfg = cfg
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        r_scan, r_odom, r_slam, r_crop = [np.random.default_rng(s)
                                          for s in ss.spawn(4)]
        start = self._start_pose()
        self.bus = Bus()
        for t in TOPICS:
            self.bus.register(t)
        self.sim = SimNode(world, cfg, start, r_scan, r_odom)
        self.slam = SlamNode(cfg, world, start, r_slam)
        self.explore = ExploreNode(cfg)
        self.move_base = MoveBaseNode(cfg)
        self.pid = PidState(kp=cfg.pid_kp, ki=cfg.pid_ki, kd=cfg.pid_kd,
                            setpoint=cfg.altitude_setpoint,
                            i_max=cfg.pid_i_max, vz_max=cfg.vz_max)
        self.crop = CropNode(cfg, world, r_crop)
        self.dmap = cropsense.DiseaseMap(world, min_obs=cfg.min_obs)

        self.phase = PHASE_TAKEOFF
        self.phases: list[dict] = [{"name": PHASE_TAKEOFF, "start_tick": 0}]
        self.settled_ticks = 0
        self.collisions = 0
        self.in_collision = False
        self.obs_counts = np.zeros((world.height, world.width), dtype=np.int64)
        self.trajectory: list[tuple[float, float]] = []
        self.curve_rows: list[list] = []
        self.alt_rows: list[list] = []
        self.max_abs_vz = 0.0
        self.survey_queue: list[Pose] = []
        self.survey_visited = 0
        self.survey_total = 0
        self.survey_start_tick = 0
        self.nav_targets: list[Pose] = []
        self.nav_results: list[bool] = []
        self.nav_collisions = 0
        self.nav_start_tick = 0
        self.exit_status = "ok"
        self._last_traj_point: Pose | None = None

    def _start_pose(self) -> Pose:
        c = self.cfg
        x0, y0, x1, y1 = self.world.extent()
        x = c.start_x if math.isfinite(c.start_x) else (x0 + x1) / 2
        y = c.start_y if math.isfinite(c.start_y) else (y0 + y1) / 2
        return Pose(x, y, c.start_yaw, 0.0)

    # -- per-tick bookkeeping --

    def _audit(self, tick: int) -> None:
        pose = self.sim.true_pose
        hit = collision_check(self.world, pose, self.cfg.robot_radius)
        if hit and not self.in_collision:
            self.collisions += 1
            if self.phase == PHASE_NAV:
                self.nav_collisions += 1
        self.in_collision = hit
        if (self._last_traj_point is None
                or math.hypot(pose.x - self._last_traj_point.x,
                              pose.y - self._last_traj_point.y) >= 0.1):
            self.trajectory.append((round(pose.x, 4), round(pose.y, 4)))
            self._last_traj_point = pose
        if tick % 20 == 0:
            grid = self.explore.grid
            unknown = int(grid.unknown_mask().sum()) if grid is not None else \
                self.world.width * self.world.height
            self.curve_rows.append([tick, unknown, self._crop_coverage()])
        if tick % 10 == 0:
            self.alt_rows.append([tick, round(self.sim.true_pose.z, 4)])

    def _count_scan_coverage(self, scan: LaserScan) -> None:
        pose = scan.pose_stamp
        angles = pose.yaw + scan.angles()
        r = scan.ranges + 0.5 * self.world.resolution
        ex = (pose.x + r * np.cos(angles) - self.world.origin[0]) / self.world.resolution
        ey = (pose.y + r * np.sin(angles) - self.world.origin[1]) / self.world.resolution
        cx, cy = self.world.world_to_cell(pose.x, pose.y)
        _kernels.observation_counts(self.obs_counts, cx, cy,
                                    np.floor(ex).astype(np.int64),
                                    np.floor(ey).astype(np.int64),
                                    scan.hit_mask())

    def _crop_coverage(self) -> float:
        crop_total = int(self.world.crop_mask.sum())
        if crop_total == 0:
            return 0.0
        fused = int(((self.dmap.totals() >= self.cfg.min_obs)
                     & self.world.crop_mask).sum())
        return round(fused / crop_total, 6)

    # -- phase transitions --

    def _enter_phase(self, name: str, tick: int) -> None:
        self.phases[-1]["end_tick"] = tick
        self.phases.append({"name": name, "start_tick": tick})
        self.phase = name

    def _next_phase_after_explore(self, tick: int) -> None:
        self.move_base.cancel()
        if self.cfg.survey_enabled and self.world.crop_mask.any() \
                and self.explore.grid is not None:
            self.survey_queue = survey_waypoints(self.explore.grid, self.dmap,
                                                 self.cfg)
            self.survey_total = len(self.survey_queue)
            if self.survey_queue:
                self.survey_start_tick = tick
                self._enter_phase(PHASE_SURVEY, tick)
                return
        self._maybe_enter_nav(tick)

    def _maybe_enter_nav(self, tick: int) -> None:
        self.move_base.cancel()
        a = self.cfg.parse_nav_pose("nav_start")
        b = self.cfg.parse_nav_pose("nav_goal")
        if self.cfg.nav_enabled and a and b:
            self.nav_targets = [Pose(*a), Pose(*b)]
            self.nav_start_tick = tick
            self._enter_phase(PHASE_NAV, tick)
        else:
            self._enter_phase("done", tick)

    def _publish_goal(self, pose: Pose, purpose: str, tol_xy: float,
                      tol_yaw: float) -> None:
        self.explore.goal_seq += 1
        self.bus.publish("goal", GoalMessage(
            pose=pose, purpose=purpose, unknown_lethal=True,
            tol_xy=tol_xy, tol_yaw=tol_yaw, goal_id=self.explore.goal_seq))

    # -- phase logic, runs after move_base each tick --

    def _phase_step(self, tick: int) -> None:
        cfg = self.cfg
        if self.phase == PHASE_TAKEOFF:
            if abs(self.sim.true_pose.z - cfg.altitude_setpoint) <= 0.05:
                self.settled_ticks += 1
            else:
                self.settled_ticks = 0
            if self.settled_ticks >= 10 and self.slam.updates >= 1:
                self._enter_phase(PHASE_EXPLORE, tick)
            return

        if self.phase == PHASE_EXPLORE:
            state = self.move_base.state
            if self.explore.active_goal is not None:
                if state == MoveBaseNode.REACHED:
                    self.explore.report_outcome(True)
                    self.move_base.cancel()
                elif state == MoveBaseNode.FAILED:
                    self.explore.report_outcome(False)
                    self.move_base.cancel()
                elif not self.explore.goal_still_frontier():
                    # already mapped through it: count as success, move on
                    self.explore.report_outcome(True)
                    self.move_base.cancel()
            if self.explore.active_goal is None:
                if self.explore.done():
                    self.slam.frozen = True
                    self._next_phase_after_explore(tick)
                else:
                    self.explore.select_and_publish(self.bus)
            return

        if self.phase == PHASE_SURVEY:
            coverage_met = self._crop_coverage() >= cfg.survey_coverage_target
            timeout = (tick - self.survey_start_tick) * cfg.tick_dt \
                > cfg.survey_timeout_s
            state = self.move_base.state
            if state in (MoveBaseNode.REACHED, MoveBaseNode.FAILED):
                self.survey_visited += 1
                self.move_base.cancel()
            if coverage_met or timeout or (
                    not self.survey_queue and self.move_base.state == MoveBaseNode.IDLE):
                self._maybe_enter_nav(tick)
                return
            if self.move_base.state == MoveBaseNode.IDLE and self.survey_queue:
                wp = self.survey_queue.pop(0)
                self._publish_goal(wp, "survey", tol_xy=0.5, tol_yaw=math.pi)
            return

        if self.phase == PHASE_NAV:
            timeout = (tick - self.nav_start_tick) * cfg.tick_dt > cfg.nav_timeout_s
            state = self.move_base.state
            if state in (MoveBaseNode.REACHED, MoveBaseNode.FAILED):
                self.nav_results.append(state == MoveBaseNode.REACHED)
                self.move_base.cancel()
                self.nav_targets.pop(0)
            if timeout and self.nav_targets:
                self.nav_results.append(False)
                self.move_base.cancel()
                self.nav_targets = []
            if not self.nav_targets:
                self._enter_phase("done", tick)
                return
            if self.move_base.state == MoveBaseNode.IDLE:
                self._publish_goal(self.nav_targets[0], "nav",
                                   tol_xy=cfg.nav_tol_xy, tol_yaw=cfg.nav_tol_yaw)
            return

    # -- main loop --

    def run(self) -> MissionReport:
        cfg = self.cfg
        tick = 0
        while self.phase != "done" and tick < cfg.tick_budget:
            bus = self.bus
            self.sim.on_tick(bus)
            if self.sim.last_scan is not None \
                    and self.sim.last_scan.seq == self.sim.scan_seq - 1 \
                    and bus.tick % cfg.lidar_period == 0:
                self._count_scan_coverage(self.sim.last_scan)
            self.slam.on_tick(bus)
            if self.slam.degeneracy_count > cfg.max_degeneracy:
                self.exit_status = "slam_degenerate"
                break
            self.explore.ingest(bus)
            planar = self.move_base.on_tick(bus)
            vz = pid_step(self.pid, self.sim.true_pose.z, cfg.tick_dt)
            self.max_abs_vz = max(self.max_abs_vz, abs(vz))
            bus.publish("cmd_vel", Twist(vx=planar.vx, vy=planar.vy,
                                         omega=planar.omega, vz=vz))
            self.crop.on_tick(bus, self.sim.true_pose, tick, cfg.tick_dt)
            for msg in bus.poll("detections", "fusion"):
                cropsense.fuse(self.dmap, list(msg.payload.observations))
            self._audit(tick)
            self._phase_step(tick)
            bus.advance()
            bus.prune()
            tick += 1
        if self.phase != "done" and self.exit_status == "ok":
            self.exit_status = "budget_exhausted"
        self.phases[-1].setdefault("end_tick", tick)
        return self._build_report(tick)

    # -- report assembly --

    def _map_fidelity(self) -> dict:
        grid = mapping.best_map(self.slam.particles)
        seen = self.obs_counts >= 3
        decided = ~grid.unknown_mask()
        if grid.logodds.shape != self.obs_counts.shape:
            return {"cells_observed_3plus": 0, "correct_pct": 0.0,
                    "note": "map resolution differs from world"}
        check = seen & decided
        total = int(check.sum())
        if total == 0:
            return {"cells_observed_3plus": 0, "correct_pct": 0.0}
        correct = (grid.occupied_mask()[check] == self.world.obstacle_mask[check])
        return {"cells_observed_3plus": total,
                "correct_pct": round(float(correct.mean()) * 100.0, 3)}

    def _free_coverage(self) -> float:
        """Share of reachable ground-truth free cells classified in the map."""
        grid = mapping.best_map(self.slam.particles)
        if grid.logodds.shape != self.world.cells.shape:
            return 0.0
        from scipy import ndimage as ndi
        traversable = ~self.world.obstacle_mask
        labels, _ = ndi.label(traversable)
        sx, sy = self.world.world_to_cell(self.sim.true_pose.x, self.sim.true_pose.y)
        start_label = labels[min(sy, self.world.height - 1),
                             min(sx, self.world.width - 1)]
        reachable = labels == start_label if start_label else traversable
        classified = ~grid.unknown_mask()
        denom = int(reachable.sum())
        return round(float((classified & reachable).sum()) / denom * 100.0, 3) \
            if denom else 0.0

    def _build_report(self, ticks: int) -> MissionReport:
        cfg = self.cfg
        disease_report = cropsense.evaluate(self.dmap, self.world)
        disease = disease_report.to_dict()
        disease["observations"] = self.dmap.observation_total()
        disease["frames"] = self.crop.frames
        disease["rejected"] = self.dmap.rejected
        explored = {
            "done": self.explore.done() or self.phase in
                    (PHASE_SURVEY, PHASE_NAV, "done") and self.slam.frozen,
            "free_coverage_pct": self._free_coverage(),
            "goals_selected": self.explore.goals_selected,
            "goals_reached": self.explore.goals_reached,
            "goals_failed": self.explore.goals_failed,
            "blacklisted": self.explore.blacklist.blacklisted_count(),
        }
        report = MissionReport(
            seed=self.seed,
            config_hash=config_hash(cfg),
            world={"width": self.world.width, "height": self.world.height,
                   "resolution": self.world.resolution,
                   "origin": list(self.world.origin)},
            exit_status=self.exit_status,
            ticks_total=ticks,
            sim_time_s=round(ticks * cfg.tick_dt, 6),
            phases=self.phases,
            exploration=explored,
            map_fidelity=self._map_fidelity(),
            slam={"updates": self.slam.updates,
                  "resamples": self.slam.resamples,
                  "degeneracy_count": self.slam.degeneracy_count,
                  "final_n_eff": round(self.slam.last_neff, 3),
                  "particles": cfg.slam_particles},
            collisions=self.collisions,
            disease=disease,
            survey={"enabled": cfg.survey_enabled,
                    "waypoints": self.survey_total,
                    "visited": self.survey_visited,
                    "crop_coverage": self._crop_coverage()},
            nav={"enabled": cfg.nav_enabled,
                 "attempted": len(self.nav_results),
                 "reached": sum(self.nav_results),
                 "collisions": self.nav_collisions},
            pid={"max_abs_vz": round(self.max_abs_vz, 6),
                 "setpoint": cfg.altitude_setpoint,
                 "final_z": round(self.sim.true_pose.z, 6)},
            curves={"coverage": self.curve_rows, "altitude": self.alt_rows},
            trajectory=[list(p) for p in self.trajectory],
            artifacts=[],
        )
        return report


def run_mission(world: World, cfg: Config, seed: int) -> tuple[MissionReport, MissionRunner]:
    """Run a full mission; returns the report and the runner (for artifacts)."""
    runner = MissionRunner(world, cfg, seed)
    report = runner.run()
    return report, runner
