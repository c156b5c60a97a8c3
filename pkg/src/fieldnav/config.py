"""Flat key-value mission configuration.

File format: one `key = value` per line, `#` or `%` comments, blank lines
ignored. Every key has a documented default; unknown keys are errors so typos
fail loudly. The canonical serialization (sorted keys, repr values) is what
the report's config hash covers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # simulation cadence
    tick_dt: float = 0.05            # control period, s (20 Hz)
    lidar_period: int = 2            # ticks between scans
    tick_budget: int = 60_000

    # start pose; NaN means "center of the world"
    start_x: float = math.nan
    start_y: float = math.nan
    start_yaw: float = 0.0

    # lidar
    lidar_beams: int = 360
    lidar_range_max: float = 10.0
    lidar_sigma: float = 0.01

    # platform limits
    v_max: float = 1.0
    omega_max: float = 1.5
    vz_max: float = 1.0
    accel_v: float = 1.0
    accel_omega: float = 3.0

    # altitude hold
    altitude_setpoint: float = 2.0
    pid_kp: float = 1.5
    pid_ki: float = 0.2
    pid_kd: float = 0.4
    pid_i_max: float = 1.0

    # simulated odometry measurement noise (localization sees this drift)
    odom_noise_trans: float = 0.01       # sigma fraction of distance moved
    odom_noise_rot: float = 0.01         # sigma fraction of rotation
    odom_noise_rot_per_m: float = 0.002  # rad sigma per meter moved

    # SLAM
    map_resolution: float = 0.25
    slam_particles: int = 30
    slam_resample_threshold: float = 0.5
    slam_alpha1: float = 0.05
    slam_alpha2: float = 0.05
    slam_alpha3: float = 0.05
    slam_alpha4: float = 0.05
    slam_linear_update: float = 0.1
    slam_angular_update: float = 0.05
    slam_sigma_hit: float = 0.2
    slam_z_floor: float = 1e-3
    slam_decimation: int = 4
    max_degeneracy: int = 5

    # exploration
    frontier_min_cluster: int = 3
    goal_w_dist: float = 1.0
    goal_w_size: float = 0.125
    blacklist_radius: float = 0.5
    goal_tol_xy: float = 0.35
    goal_tol_yaw: float = math.pi      # exploration goals are yaw-agnostic
    stuck_timeout_s: float = 4.0
    replan_period_s: float = 1.0

    # costmap
    robot_radius: float = 0.3
    inflation_decay_radius: float = 1.0

    # DWA
    dwa_horizon: float = 1.5
    dwa_dt: float = 0.1
    dwa_n_v: int = 11
    dwa_n_omega: int = 21
    dwa_w_heading: float = 0.8
    dwa_w_clearance: float = 0.1
    dwa_w_velocity: float = 0.1
    dwa_safety_margin: float = 0.1
    dwa_clearance_cap: float = 2.0
    dwa_lookahead: float = 1.0
    dwa_obstacle_decimation: int = 2

    # disease detector
    detector_rate_hz: float = 42.3
    leaf_recall: float = 0.19
    fov_radius: float = 1.0
    min_obs: int = 3

    # survey phase
    survey_enabled: bool = True
    survey_coverage_target: float = 0.9
    survey_spacing: float = 1.5
    survey_margin: float = 2.0
    survey_timeout_s: float = 1200.0

    # point-to-point navigation demo
    nav_enabled: bool = False
    nav_start: str = ""              # "x,y" or "x,y,yaw"
    nav_goal: str = ""
    nav_tol_xy: float = 0.35
    nav_tol_yaw: float = 0.5
    nav_timeout_s: float = 180.0

    # output options
    dump_particles: bool = False
    particles_period: int = 10       # SLAM updates between particle dumps

    def slam_alphas(self) -> tuple[float, float, float, float]:
        return (self.slam_alpha1, self.slam_alpha2, self.slam_alpha3,
                self.slam_alpha4)

    def inscribed_radius(self) -> float:
        """Inflation radius used for planning.

        Includes the DWA safety margin so A* never commits to corridors the
        local controller's admissibility test would refuse to track.
        """
        return self.robot_radius + self.dwa_safety_margin

    def parse_nav_pose(self, key: str) -> tuple[float, float, float] | None:
        raw = getattr(self, key)
        if not raw:
            return None
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) not in (2, 3):
            raise ConfigError(f"{key} must be 'x,y' or 'x,y,yaw', got {raw!r}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ConfigError(f"{key} has non-numeric coordinates: {raw!r}") from None
        return (vals[0], vals[1], vals[2] if len(vals) == 3 else 0.0)


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    if ftype in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {key!r}: expected boolean, got {raw!r}")
    if ftype in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected integer, got {raw!r}") from None
    if ftype in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key {key!r}: expected float, got {raw!r}") from None
    return raw


def parse_config(text: str) -> Config:
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("%"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, value))
    return cfg


def canonical_text(cfg: Config) -> str:
    lines = []
    for f in sorted(fields(Config), key=lambda f: f.name):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {v!r}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: Config) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()
