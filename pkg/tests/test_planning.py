import heapq
import math

import numpy as np
import pytest

from fieldnav.mapping import L_CLAMP, OccupancyGrid
from fieldnav.planning import (
    COST_INSCRIBED,
    COST_LETHAL,
    Costmap,
    DwaConfig,
    InvalidEndpointError,
    Path,
    braking_rollout,
    carrot_point,
    dijkstra_costs,
    dwa_command,
    goal_reached,
    inflate,
    plan_astar,
)
from fieldnav.simworld import Pose, Twist

SQRT2 = math.sqrt(2.0)


def free_grid(w, h, res=0.25):
    g = OccupancyGrid(w, h, res)
    g.logodds[:] = -L_CLAMP
    return g


def brute_force_inflate(grid, robot_radius, decay_radius, unknown_lethal=True):
    """O(N^2) reference: per-cell nearest lethal source by exhaustive scan."""
    lethal = grid.occupied_mask()
    if unknown_lethal:
        lethal = lethal | grid.unknown_mask()
    src = np.argwhere(lethal)
    cost = np.zeros(lethal.shape, dtype=np.uint8)
    if len(src) == 0:
        return cost
    k = 3.0 / decay_radius
    for y in range(grid.height):
        for x in range(grid.width):
            if lethal[y, x]:
                cost[y, x] = COST_LETHAL
                continue
            d2 = ((src[:, 0] - y) ** 2 + (src[:, 1] - x) ** 2).min()
            d = math.sqrt(d2) * grid.resolution
            if d <= robot_radius:
                cost[y, x] = COST_INSCRIBED
            elif d < robot_radius + decay_radius:
                cost[y, x] = int(np.rint(253.0 * math.exp(-k * (d - robot_radius))))
    return cost


class TestInflate:
    def test_all_free_grid_zero_cost(self):
        cm = inflate(free_grid(12, 9), 0.3, 1.0)
        assert (cm.cost == 0).all()

    def test_single_lethal_inscribed_ring(self):
        g = free_grid(15, 15, res=0.25)
        g.logodds[7, 7] = L_CLAMP
        cm = inflate(g, robot_radius=2 * 0.25, decay_radius=1.0)
        assert cm.cost[7, 7] == COST_LETHAL
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx or dy:
                    assert cm.cost[7 + dy, 7 + dx] == COST_INSCRIBED
        assert cm.cost[7, 9] == COST_INSCRIBED  # d = 2 cells = robot radius
        assert cm.cost[7, 10] < COST_INSCRIBED

    def test_cutoff_at_decay_radius(self):
        g = free_grid(41, 5, res=0.25)
        g.logodds[2, 0] = L_CLAMP
        cm = inflate(g, robot_radius=0.5, decay_radius=1.0)
        # d = robot_radius + decay_radius = 1.5 m = 6 cells -> cost 0
        assert cm.cost[2, 6] == 0
        assert cm.cost[2, 5] > 0

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        size = int(rng.integers(8, 33))
        g = free_grid(size, size, res=0.25)
        occ = rng.random((size, size)) < 0.1
        g.logodds[occ] = L_CLAMP
        unk = (rng.random((size, size)) < 0.05) & ~occ
        g.logodds[unk] = 0.0
        for flag in (True, False):
            cm = inflate(g, 0.3, 0.8, treat_unknown_as_lethal=flag)
            oracle = brute_force_inflate(g, 0.3, 0.8, unknown_lethal=flag)
            assert np.array_equal(cm.cost, oracle)


def empty_costmap(w, h, res=1.0):
    return Costmap(w, h, res, (0.0, 0.0), np.zeros((h, w), dtype=np.uint8))


def dijkstra_oracle(costmap, start, goal):
    """Independent uniform-cost search; returns exact (straight, diag) units."""
    w, h = costmap.width, costmap.height
    cost = costmap.cost
    INF = (1 << 60, 1 << 60)
    best = {start: (0, 0)}
    heap = [(0.0, start)]
    moves = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
    visited = set()
    while heap:
        d, cur = heapq.heappop(heap)
        if cur in visited:
            continue
        visited.add(cur)
        cx, cy = cur
        us, ud = best[cur]
        for dx, dy in moves:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < w and 0 <= ny < h) or cost[ny, nx] >= COST_INSCRIBED:
                continue
            step = 128 + int(cost[ny, nx])
            if dx and dy:
                nu = (us, ud + step)
            else:
                nu = (us + step, ud)
            nf = (nu[0] + nu[1] * SQRT2) / 128.0
            old = best.get((nx, ny), INF)
            if nf < (old[0] + old[1] * SQRT2) / 128.0:
                best[(nx, ny)] = nu
                heapq.heappush(heap, (nf, (nx, ny)))
    return best.get(goal)


class TestAstar:
    def test_start_equals_goal(self):
        cm = empty_costmap(5, 5)
        p = plan_astar(cm, (2, 2), (2, 2))
        assert p.cells == [(2, 2)] and p.total_cost == 0.0

    def test_pure_diagonal_cost(self):
        cm = empty_costmap(10, 10)
        p = plan_astar(cm, (0, 0), (9, 9))
        assert p.total_cost == pytest.approx(9 * SQRT2, abs=1e-12)
        assert p.cost_units == (0, 9 * 128)
        assert len(p.cells) == 10

    def test_path_structure_invariants(self):
        rng = np.random.default_rng(0)
        cm = empty_costmap(30, 30)
        cm.cost[rng.random((30, 30)) < 0.2] = COST_LETHAL
        cm.cost[0, 0] = 0
        cm.cost[29, 29] = 0
        p = plan_astar(cm, (0, 0), (29, 29))
        if p is not None:
            assert p.cells[0] == (0, 0) and p.cells[-1] == (29, 29)
            for (ax, ay), (bx, by) in zip(p.cells, p.cells[1:]):
                assert max(abs(ax - bx), abs(ay - by)) == 1
                assert cm.cost[by, bx] < COST_INSCRIBED

    def test_no_path_returns_none(self):
        cm = empty_costmap(9, 9)
        cm.cost[:, 4] = COST_LETHAL
        assert plan_astar(cm, (0, 0), (8, 8)) is None

    def test_invalid_endpoints_raise(self):
        cm = empty_costmap(5, 5)
        cm.cost[2, 2] = COST_LETHAL
        with pytest.raises(InvalidEndpointError):
            plan_astar(cm, (2, 2), (4, 4))
        with pytest.raises(InvalidEndpointError):
            plan_astar(cm, (0, 0), (9, 9))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_dijkstra_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        cm = empty_costmap(50, 50)
        cm.cost[rng.random((50, 50)) < 0.2] = COST_LETHAL
        decay = rng.integers(0, 120, size=(50, 50)).astype(np.uint8)
        lethal = cm.cost == COST_LETHAL
        cm.cost = np.where(lethal, COST_LETHAL, decay).astype(np.uint8)
        start, goal = (1, 1), (48, 47)
        cm.cost[1, 1] = 0
        cm.cost[47, 48] = 0
        p = plan_astar(cm, start, goal)
        oracle = dijkstra_oracle(cm, start, goal)
        if p is None:
            assert oracle is None
        else:
            assert p.cost_units == oracle  # exact integer-unit equality

    def test_dijkstra_costs_consistent_with_astar(self):
        rng = np.random.default_rng(7)
        cm = empty_costmap(30, 30)
        cm.cost[rng.random((30, 30)) < 0.15] = COST_LETHAL
        cm.cost[2, 3] = 0
        dist = dijkstra_costs(cm, (3, 2))
        for goal in [(20, 25), (28, 5), (10, 10)]:
            if cm.cost[goal[1], goal[0]] >= COST_INSCRIBED:
                continue
            p = plan_astar(cm, (3, 2), goal)
            if p is None:
                assert math.isinf(dist[goal[1], goal[0]])
            else:
                assert dist[goal[1], goal[0]] == pytest.approx(p.total_cost, abs=1e-9)


def straight_path(n=21, spacing=0.5):
    pts = [(i * spacing, 0.0) for i in range(n)]
    return Path(cells=[(i, 0) for i in range(n)], points=pts, total_cost=0.0)


class TestDwa:
    def test_open_space_max_velocity_straight(self):
        cfg = DwaConfig()
        cmd = dwa_command(Pose(0, 0, 0), Twist(), straight_path(),
                          np.empty((0, 2)), cfg)
        assert cmd is not None
        assert cmd.vx == pytest.approx(cfg.accel_v * cfg.dt_control)
        assert cmd.omega == 0.0

    def test_open_space_matches_brute_force(self):
        cfg = DwaConfig(n_v=5, n_omega=7)
        pose, vel = Pose(0, 0, 0), Twist(vx=0.4, omega=0.1)
        path = straight_path()
        cmd = dwa_command(pose, vel, path, np.empty((0, 2)), cfg)
        # brute force over the same sampled window
        vs = np.linspace(max(0, vel.vx - cfg.accel_v * cfg.dt_control),
                         min(cfg.v_max, vel.vx + cfg.accel_v * cfg.dt_control), cfg.n_v)
        ws = np.linspace(max(-cfg.omega_max, vel.omega - cfg.accel_omega * cfg.dt_control),
                         min(cfg.omega_max, vel.omega + cfg.accel_omega * cfg.dt_control),
                         cfg.n_omega)
        carrot = carrot_point(path, pose, cfg.lookahead)
        steps = int(round(cfg.sim_horizon / cfg.dt_traj))
        head = []
        pairs = []
        for v in vs:
            for w in ws:
                x, y, th = pose.x, pose.y, pose.yaw
                for _ in range(steps):
                    if abs(w) < 1e-9:
                        x += v * cfg.dt_traj * math.cos(th)
                        y += v * cfg.dt_traj * math.sin(th)
                    else:
                        th_n = th + w * cfg.dt_traj
                        x += v / w * (math.sin(th_n) - math.sin(th))
                        y -= v / w * (math.cos(th_n) - math.cos(th))
                        th = th_n
                err = abs(math.atan2(math.sin(math.atan2(carrot[1] - y, carrot[0] - x) - th),
                                     math.cos(math.atan2(carrot[1] - y, carrot[0] - x) - th)))
                head.append(1 - err / math.pi)
                pairs.append((v, w))
        head = np.array(head)
        vels = np.array([p[0] for p in pairs])
        # no obstacles: clearance term is the cap for every pair (constant)
        score = (cfg.w_heading * head + cfg.w_clearance * 1.0
                 + cfg.w_velocity * vels / cfg.v_max)
        order = np.lexsort((vels, np.abs([p[1] for p in pairs]), -score))
        bv, bw = pairs[order[0]]
        assert cmd.vx == pytest.approx(bv, abs=1e-12)
        assert cmd.omega == pytest.approx(bw, abs=1e-12)

    def test_wall_limits_admissible_speed(self):
        cfg = DwaConfig(accel_v=1.0, v_max=2.0, dt_control=0.05)
        # wall of points 0.9 m ahead: body radius 0.4 -> free arc ~0.5 m
        wall = np.array([[0.9, y] for y in np.linspace(-1, 1, 41)])
        cmd = dwa_command(Pose(0, 0, 0), Twist(vx=1.0), straight_path(), wall, cfg)
        assert cmd is not None
        assert cmd.vx <= math.sqrt(2 * 1.0 * 0.5) + 1e-9

    def test_all_inadmissible_returns_stop(self):
        cfg = DwaConfig(accel_v=0.5, dt_control=0.05)
        # moving fast with an obstacle at the nose: window has no v=0 pair
        wall = np.array([[0.45, 0.0]])
        cmd = dwa_command(Pose(0, 0, 0), Twist(vx=1.0), straight_path(), wall, cfg)
        assert cmd is None

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            obstacles = rng.uniform(-3, 3, size=(15, 2))
            pose = Pose(0, 0, rng.uniform(-3, 3))
            vel = Twist(vx=rng.uniform(0, 1), omega=rng.uniform(-1, 1))
            base = DwaConfig()
            scaled = DwaConfig(w_heading=base.w_heading * 7.5,
                               w_clearance=base.w_clearance * 7.5,
                               w_velocity=base.w_velocity * 7.5)
            a = dwa_command(pose, vel, straight_path(), obstacles, base)
            b = dwa_command(pose, vel, straight_path(), obstacles, scaled)
            if a is None:
                assert b is None
            else:
                assert a.vx == b.vx and a.omega == b.omega

    def test_braking_rollout_stops(self):
        cfg = DwaConfig()
        poses = braking_rollout(Pose(0, 0, 0), Twist(vx=1.0, omega=0.5), cfg)
        # total travel bounded by v*dt_control + v^2/(2a) plus integration slack
        d = math.hypot(poses[-1].x, poses[-1].y)
        assert d <= 1.0 * cfg.dt_control + 0.5 / cfg.accel_v + 0.05


class TestGoalReached:
    def test_exact(self):
        p = Pose(1, 2, 0.3)
        assert goal_reached(p, p, 0.0, 0.0)

    def test_boundary_inclusive(self):
        assert goal_reached(Pose(0, 0, 0), Pose(0.5, 0, 0), 0.5, 0.1)

    def test_yaw_error_pi(self):
        assert not goal_reached(Pose(0, 0, math.pi), Pose(0, 0, 0), 1.0, math.pi / 8)


def test_carrot_point_lookahead():
    path = straight_path(n=11, spacing=0.5)
    c = carrot_point(path, Pose(0, 0, 0), 1.0)
    assert c == (1.0, 0.0)
    # near the end the final waypoint is the carrot
    c = carrot_point(path, Pose(4.8, 0, 0), 1.0)
    assert c == (5.0, 0.0)
