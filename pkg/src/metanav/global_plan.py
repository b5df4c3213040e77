"""Grid Dijkstra global planning, local-goal extraction and optimal travel time."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from metanav.angles import wrap_to_pi
from metanav.world import ROBOT_RADIUS, OccupancyGrid, Pose

DEFAULT_LOOKAHEAD = 1.5
NOMINAL_V_MAX = 2.0

_NEIGHBOURS = ((0, 1, 1.0), (1, 0, 1.0), (1, 1, math.sqrt(2.0)), (1, -1, math.sqrt(2.0)))


class Unreachable(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class GlobalPath:
    waypoints: np.ndarray  # (n, 2) metric cell centers, start first
    length_m: float

    def __post_init__(self) -> None:
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)
        arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(wp, axis=0).T))])
        arc.setflags(write=False)
        object.__setattr__(self, "arc_length", arc)

    def __len__(self) -> int:
        return len(self.waypoints)


class LocalGoal(NamedTuple):
    point: tuple[float, float]
    phi: float
    nearest_index: int


def traversable(grid: OccupancyGrid, robot_radius: float = ROBOT_RADIUS) -> np.ndarray:
    """Cells whose inflated cost is below lethal."""
    return grid.distance_field > robot_radius


class GoalPlanner:
    """Single-source Dijkstra from a fixed goal cell over the 8-connected
    traversable grid. Paths from any start are read off the predecessor tree,
    so one search serves every start pose on the same map."""

    def __init__(self, grid: OccupancyGrid, goal: tuple[int, int] | None = None,
                 robot_radius: float = ROBOT_RADIUS) -> None:
        self.grid = grid
        self.goal = grid.goal if goal is None else (int(goal[0]), int(goal[1]))
        self.free = traversable(grid, robot_radius)
        h, w = self.free.shape
        if not (0 <= self.goal[0] < h and 0 <= self.goal[1] < w) or not self.free[self.goal]:
            raise Unreachable(f"goal cell {self.goal} is not traversable")
        self.dist, self.pred = self._search()

    def _search(self) -> tuple[np.ndarray, np.ndarray]:
        free = self.free
        h, w = free.shape
        res = self.grid.resolution
        idx = np.arange(h * w).reshape(h, w)
        rows, cols, data = [], [], []
        for dr, dc, k in _NEIGHBOURS:
            # pair cell (r, c) with (r + dr, c + dc); dr is never negative
            r0, r1 = slice(0, h - dr), slice(dr, h)
            if dc >= 0:
                c0, c1 = slice(0, w - dc), slice(dc, w)
            else:
                c0, c1 = slice(-dc, w), slice(0, w + dc)
            a = free[r0, c0] & free[r1, c1]
            src = idx[r0, c0][a]
            dst = idx[r1, c1][a]
            rows += [src, dst]
            cols += [dst, src]
            data += [np.full(src.size, k * res)] * 2
        graph = csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(h * w, h * w))
        goal_idx = self.goal[0] * w + self.goal[1]
        dist, pred = dijkstra(graph, directed=False, indices=goal_idx, return_predecessors=True)
        return dist.reshape(h, w), pred

    def path_from(self, start: tuple[int, int]) -> GlobalPath:
        r, c = int(start[0]), int(start[1])
        h, w = self.free.shape
        if not (0 <= r < h and 0 <= c < w) or not self.free[r, c]:
            raise Unreachable(f"start cell {start} is not traversable")
        if not np.isfinite(self.dist[r, c]):
            raise Unreachable(f"no path from {start} to {self.goal}")
        node = r * w + c
        goal_idx = self.goal[0] * w + self.goal[1]
        chain = [node]
        while node != goal_idx:
            node = int(self.pred[node])
            chain.append(node)
        chain_arr = np.array(chain)
        res = self.grid.resolution
        pts = np.stack([(chain_arr % w + 0.5) * res, (chain_arr // w + 0.5) * res], axis=1)
        seg = np.hypot(*np.diff(pts, axis=0).T)
        return GlobalPath(waypoints=pts, length_m=float(seg.sum()))

    def path_from_pose(self, pose: Pose) -> GlobalPath:
        return self.path_from(self.grid.cell_of(pose.x, pose.y))


def plan_global(grid: OccupancyGrid, start: tuple[int, int], goal: tuple[int, int],
                robot_radius: float = ROBOT_RADIUS) -> GlobalPath:
    """Shortest 8-connected path (diagonal step sqrt(2)*res) over non-lethal cells."""
    return GoalPlanner(grid, goal, robot_radius).path_from(start)


def optimal_time(grid: OccupancyGrid, start: tuple[int, int], goal: tuple[int, int],
                 v_max: float = NOMINAL_V_MAX) -> float:
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    return plan_global(grid, start, goal).length_m / v_max


def local_goal(path: GlobalPath, pose: Pose, lookahead_m: float = DEFAULT_LOOKAHEAD,
               start_index: int = 0) -> LocalGoal:
    """Point ``lookahead_m`` of arc length past the path point nearest ``pose``.

    Only waypoints from ``start_index`` on are considered for the nearest point,
    which lets a caller keep the local goal monotone along the path.
    """
    if len(path) == 0:
        raise ValueError("empty path")
    if lookahead_m <= 0:
        raise ValueError("lookahead must be positive")
    wp = path.waypoints
    start_index = min(max(int(start_index), 0), len(wp) - 1)
    tail = wp[start_index:]
    d2 = (tail[:, 0] - pose.x) ** 2 + (tail[:, 1] - pose.y) ** 2
    nearest = start_index + int(np.argmin(d2))
    arc = path.arc_length
    ahead = np.nonzero(arc[nearest:] - arc[nearest] >= lookahead_m)[0]
    k = nearest + int(ahead[0]) if ahead.size else len(wp) - 1
    gx, gy = float(wp[k, 0]), float(wp[k, 1])
    phi = wrap_to_pi(math.atan2(gy - pose.y, gx - pose.x) - pose.w)
    return LocalGoal((gx, gy), phi, nearest)
