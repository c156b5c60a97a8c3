"""Frontier detection, clustering, and exploration goal selection.

A frontier cell is a free cell with at least one unknown 4-neighbor; clusters
are 8-connected components of frontier cells. Goal selection floods the
costmap once from the robot (single-source minimum path cost, identical cost
law to the global planner) and ranks clusters by a distance/size blend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .mapping import OccupancyGrid
from .planning import COST_INSCRIBED, Costmap, dijkstra_costs
from .simworld import Pose

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class FrontierCluster:
    cells: np.ndarray                 # (n, 2) of (cx, cy), lexicographically sorted
    centroid: tuple[float, float]     # world coordinates
    size: int
    cost: float = math.inf            # planner cost filled in by select_goal


def frontier_mask(grid: OccupancyGrid) -> np.ndarray:
    """Free cells 4-adjacent to at least one unknown cell."""
    unknown = grid.unknown_mask()
    near_unknown = np.zeros_like(unknown)
    near_unknown[1:, :] |= unknown[:-1, :]
    near_unknown[:-1, :] |= unknown[1:, :]
    near_unknown[:, 1:] |= unknown[:, :-1]
    near_unknown[:, :-1] |= unknown[:, 1:]
    return grid.free_mask() & near_unknown


def find_frontiers(grid: OccupancyGrid, min_cluster_size: int = 3) -> list[FrontierCluster]:
    """Cluster the frontier mask into 8-connected components.

    Clusters below min_cluster_size are dropped; the result is ordered by
    (size descending, centroid lexicographic) so downstream choices are
    deterministic.
    """
    mask = frontier_mask(grid)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    clusters = []
    for lbl in range(1, n + 1):
        ys, xs = np.nonzero(labels == lbl)
        if len(xs) < min_cluster_size:
            continue
        order = np.lexsort((ys, xs))
        cells = np.column_stack([xs[order], ys[order]])
        cx = grid.origin[0] + (xs.mean() + 0.5) * grid.resolution
        cy = grid.origin[1] + (ys.mean() + 0.5) * grid.resolution
        clusters.append(FrontierCluster(cells=cells, centroid=(float(cx), float(cy)),
                                        size=len(xs)))
    clusters.sort(key=lambda c: (-c.size, c.centroid))
    return clusters


@dataclass
class Blacklist:
    """Frontier goals that repeatedly failed, keyed by centroid proximity.

    A centroid within `radius` of two recorded failures is skipped by goal
    selection; exploration_done treats blacklisted-only frontiers as done.
    """

    radius: float = 0.5
    max_failures: int = 2
    entries: list[tuple[float, float, int]] = field(default_factory=list)

    def _find(self, centroid):
        for i, (x, y, _) in enumerate(self.entries):
            if math.hypot(centroid[0] - x, centroid[1] - y) <= self.radius:
                return i
        return None

    def record_failure(self, centroid: tuple[float, float]) -> None:
        i = self._find(centroid)
        if i is None:
            self.entries.append((centroid[0], centroid[1], 1))
        else:
            x, y, n = self.entries[i]
            self.entries[i] = (x, y, n + 1)

    def contains(self, centroid: tuple[float, float]) -> bool:
        i = self._find(centroid)
        return i is not None and self.entries[i][2] >= self.max_failures

    def blacklisted_count(self) -> int:
        return sum(1 for _, _, n in self.entries if n >= self.max_failures)


@dataclass
class ExplorationGoal:
    pose: Pose
    cluster: FrontierCluster
    path_cost: float


def select_goal(clusters: list[FrontierCluster], pose: Pose, costmap: Costmap,
                weights: tuple[float, float] = (1.0, 0.125),
                blacklist: Blacklist | None = None) -> ExplorationGoal | None:
    """Pick the best reachable frontier.

    For each non-blacklisted cluster the target is the reachable member cell
    nearest the centroid; its flood cost from the robot is the cluster's path
    cost. Score = w_dist * path_cost - w_size * size, minimized. The goal
    pose sits at the target cell center with yaw facing the centroid.
    Returns None when no cluster has a reachable cell.
    """
    if not clusters:
        return None
    w_dist, w_size = weights
    start = costmap.world_to_cell(pose.x, pose.y)
    flood = dijkstra_costs(costmap, start)
    best = None
    for cluster in clusters:
        if blacklist is not None and blacklist.contains(cluster.centroid):
            continue
        xs = cluster.cells[:, 0]
        ys = cluster.cells[:, 1]
        costs = flood[ys, xs]
        reachable = np.isfinite(costs)
        if not reachable.any():
            continue
        centers_x = costmap.origin[0] + (xs + 0.5) * costmap.resolution
        centers_y = costmap.origin[1] + (ys + 0.5) * costmap.resolution
        d2 = (centers_x - cluster.centroid[0]) ** 2 + (centers_y - cluster.centroid[1]) ** 2
        d2 = np.where(reachable, d2, np.inf)
        pick = int(np.argmin(d2))
        path_cost = float(costs[pick])
        score = w_dist * path_cost - w_size * cluster.size
        if best is None or score < best[0]:
            gx, gy = float(centers_x[pick]), float(centers_y[pick])
            yaw = math.atan2(cluster.centroid[1] - gy, cluster.centroid[0] - gx) \
                if (gx, gy) != cluster.centroid else 0.0
            best = (score, ExplorationGoal(pose=Pose(gx, gy, yaw, pose.z),
                                           cluster=cluster, path_cost=path_cost))
    return best[1] if best else None


def exploration_done(grid: OccupancyGrid, min_cluster_size: int = 3,
                     blacklist: Blacklist | None = None) -> bool:
    """True iff no frontier clusters remain after blacklist filtering."""
    clusters = find_frontiers(grid, min_cluster_size)
    if blacklist is not None:
        clusters = [c for c in clusters if not blacklist.contains(c.centroid)]
    return len(clusters) == 0


def frontier_csv_rows(clusters: list[FrontierCluster]) -> list[str]:
    """CSV rows (cluster_id, cell_x, cell_y) for frontier overlays."""
    rows = []
    for i, cluster in enumerate(clusters):
        for cx, cy in cluster.cells:
            rows.append(f"{i},{int(cx)},{int(cy)}")
    return rows
