import numpy as np
import pytest

from fieldnav.exploration import (
    Blacklist,
    exploration_done,
    find_frontiers,
    frontier_csv_rows,
    frontier_mask,
    select_goal,
)
from fieldnav.mapping import L_CLAMP, OccupancyGrid
from fieldnav.planning import COST_LETHAL, Costmap, inflate
from fieldnav.simworld import Pose


def grid_from_chars(rows, res=0.5):
    """'.' free, '#' occupied, '?' unknown; first row = max y."""
    h, w = len(rows), len(rows[0])
    g = OccupancyGrid(w, h, res)
    for r, row in enumerate(rows):
        y = h - 1 - r
        for x, ch in enumerate(row):
            g.logodds[y, x] = {"#": L_CLAMP, ".": -L_CLAMP, "?": 0.0}[ch]
    return g


def brute_force_frontiers(grid):
    """Definitional per-cell scan: free with an unknown 4-neighbor."""
    free = grid.free_mask()
    unknown = grid.unknown_mask()
    out = np.zeros_like(free)
    h, w = free.shape
    for y in range(h):
        for x in range(w):
            if not free[y, x]:
                continue
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nx, ny = x + dx, y + dy
                if 0 <= nx < w and 0 <= ny < h and unknown[ny, nx]:
                    out[y, x] = True
                    break
    return out


class TestFindFrontiers:
    def test_fully_classified_map_empty(self):
        g = grid_from_chars(["....", "..##", "...."])
        assert find_frontiers(g, 1) == []

    def test_center_free_ringed_by_unknown(self):
        g = grid_from_chars(["???", "?.?", "???"])
        clusters = find_frontiers(g, 1)
        assert len(clusters) == 1
        assert clusters[0].size == 1
        assert clusters[0].cells.tolist() == [[1, 1]]

    def test_min_cluster_size_filters(self):
        g = grid_from_chars(["?..", "...", "..."])
        # exactly two frontier cells touch the unknown corner cell
        assert len(find_frontiers(g, min_cluster_size=1)) == 1
        assert find_frontiers(g, min_cluster_size=3) == []

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = OccupancyGrid(20, 20, 0.5)
        vals = rng.choice([-L_CLAMP, 0.0, L_CLAMP], size=(20, 20),
                          p=[0.5, 0.35, 0.15])
        g.logodds[:] = vals
        assert np.array_equal(frontier_mask(g), brute_force_frontiers(g))
        # cluster cell sets cover exactly the mask
        clusters = find_frontiers(g, min_cluster_size=1)
        got = np.zeros((20, 20), dtype=bool)
        for c in clusters:
            got[c.cells[:, 1], c.cells[:, 0]] = True
        assert np.array_equal(got, brute_force_frontiers(g))

    def test_deterministic_ordering(self):
        g = grid_from_chars([
            "??????????",
            "?........?",
            "??????...?",
            "......?..?",
            "......?..?",
        ])
        a = find_frontiers(g, 1)
        b = find_frontiers(g, 1)
        assert [c.cells.tolist() for c in a] == [c.cells.tolist() for c in b]
        sizes = [c.size for c in a]
        assert sizes == sorted(sizes, reverse=True)


def open_costmap(grid):
    return inflate(grid, robot_radius=0.4, decay_radius=0.5,
                   treat_unknown_as_lethal=False)


class TestSelectGoal:
    def test_single_reachable_cluster(self):
        g = grid_from_chars([
            "??????",
            "?....?",
            "?....?",
            "??????",
        ])
        clusters = find_frontiers(g, 1)
        assert clusters
        goal = select_goal(clusters, Pose(1.2, 1.2, 0), open_costmap(g))
        assert goal is not None
        assert goal.cluster in clusters

    def test_nearer_of_equal_size_wins(self):
        # two identical unknown pockets, one much farther from the robot
        rows = ["................",
                ".??..........??.",
                ".??..........??.",
                "................"]
        g = grid_from_chars(rows, res=0.5)
        clusters = find_frontiers(g, 1)
        assert len(clusters) == 2
        goal = select_goal(clusters, Pose(1.0, 1.0, 0), open_costmap(g),
                           weights=(1.0, 0.125))
        assert goal.pose.x < 4.0  # the left pocket

    def test_unreachable_cluster_skipped(self):
        rows = ["#########",
                "#...#..?#",
                "#.?.#####",
                "#########"]
        g = grid_from_chars(rows, res=0.5)
        clusters = find_frontiers(g, 1)
        cm = Costmap(g.width, g.height, g.resolution, g.origin,
                     np.where(g.occupied_mask(), COST_LETHAL, 0).astype(np.uint8))
        goal = select_goal(clusters, Pose(0.75, 1.25, 0), cm)
        assert goal is not None
        assert goal.pose.x < 2.5  # the walled-off right pocket is not chosen

    def test_blacklist_skips_cluster(self):
        g = grid_from_chars(["??????", "?....?", "??????"])
        clusters = find_frontiers(g, 1)
        bl = Blacklist()
        for c in clusters:
            bl.record_failure(c.centroid)
            bl.record_failure(c.centroid)
        assert select_goal(clusters, Pose(1.2, 0.8, 0), open_costmap(g),
                           blacklist=bl) is None


class TestExplorationDone:
    def test_all_unknown_is_done(self):
        g = OccupancyGrid(8, 8, 0.5)
        assert exploration_done(g)  # no free cells -> no frontiers

    def test_open_frontier_not_done(self):
        g = grid_from_chars(["??????", "?....?", "??????"])
        assert not exploration_done(g, 1)

    def test_classified_map_done(self):
        g = grid_from_chars(["######", "#....#", "######"])
        assert exploration_done(g, 1)

    def test_blacklisted_only_counts_as_done(self):
        g = grid_from_chars(["??????", "?....?", "??????"])
        bl = Blacklist()
        for c in find_frontiers(g, 1):
            bl.record_failure(c.centroid)
            bl.record_failure(c.centroid)
        assert exploration_done(g, 1, blacklist=bl)
        assert not exploration_done(g, 1)
        assert bl.blacklisted_count() >= 1


def test_frontier_csv_rows():
    g = grid_from_chars(["???", "?.?", "???"])
    rows = frontier_csv_rows(find_frontiers(g, 1))
    assert rows == ["0,1,1"]
