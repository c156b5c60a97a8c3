"""fieldnav: deterministic 2D field-survey navigation stack and simulator."""

__version__ = "0.1.0"

from .simworld import (  # noqa: F401
    CellKind,
    LaserScan,
    LidarConfig,
    Pose,
    Twist,
    World,
    collision_check,
    load_world,
    serialize_world,
    simulate_scan,
    step_kinematics,
)
