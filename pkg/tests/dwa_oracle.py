"""Independent exhaustive DWA re-evaluation used by unit and acceptance tests.

Rollouts are recomputed one candidate at a time with the scalar kinematics and
scored with the scalar cost function, then the argmin is taken with a plain
Python loop over the same sampled velocity set.
"""
from __future__ import annotations

import math

import numpy as np

from metanav import dwa
from metanav.global_plan import GoalPlanner, local_goal
from metanav.world import Pose, check_collision, generate_map, inflate


def exhaustive_argmin(costmap, pose, current_vel, goal_xy, path, config):
    config = config.clamped()
    vs, ws = dwa.sample_window(config, current_vel)
    best = None
    for i, (v, w) in enumerate(zip(vs, ws)):
        traj = dwa.rollout(pose, float(v), float(w), costmap)
        if not traj.feasible:
            continue
        c = dwa.score(traj, costmap, goal_xy, path, config).total_cost
        key = (c, -v, abs(w), i)
        if best is None:
            best = (key, traj)
            continue
        (bc, bnv, bw, bi), _ = best
        if c < bc - dwa.TIE_TOLERANCE:
            best = (key, traj)
        elif abs(c - bc) <= dwa.TIE_TOLERANCE and (-v, abs(w), i) < (bnv, bw, bi):
            best = (key, traj)
    return None if best is None else best[1]


def random_scene(rng: np.random.Generator):
    difficulty = ["easy", "medium", "difficult"][int(rng.integers(3))]
    grid = generate_map(difficulty, int(rng.integers(0, 1000)))
    config = dwa.PlannerConfig.from_normalized(rng.uniform(-1, 1, 7))
    costmap = inflate(grid, config.inflation_radius)
    planner = GoalPlanner(grid)
    while True:
        x, y = rng.uniform(0.5, grid.width_m - 0.5, 2)
        pose = Pose(x, y, rng.uniform(-math.pi, math.pi))
        if check_collision(grid, pose) or not np.isfinite(planner.dist[grid.cell_of(x, y)]):
            continue
        break
    path = planner.path_from_pose(pose)
    goal = local_goal(path, pose, 1.5).point
    vel = (float(rng.uniform(0, config.max_vel_x)), float(rng.uniform(-1, 1) * config.max_vel_theta))
    return costmap, pose, vel, goal, path, config
