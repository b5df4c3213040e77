"""Configurable Dynamic Window Approach local planner.

The seven tunable parameters in :class:`PlannerConfig` are the meta-planner's
action space. Everything else (acceleration limits, horizon, obstacle weight)
is fixed.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from metanav.global_plan import GlobalPath
from metanav.world import Command, Costmap, Pose, step_kinematics, step_kinematics_batch

ACCEL_V = 2.0  # m/s^2
ACCEL_OMEGA = 3.2  # rad/s^2
CONTROL_DT = 0.1
HORIZON_S = 1.5
OCCDIST_SCALE = 0.1
TIE_TOLERANCE = 1e-9

PARAM_BOUNDS: dict[str, tuple[float, float]] = {
    "max_vel_x": (0.1, 2.0),
    "max_vel_theta": (0.314, 3.14),
    "vx_samples": (4, 12),
    "vtheta_samples": (8, 40),
    "path_distance_bias": (0.1, 0.5),
    "goal_distance_bias": (0.1, 2.0),
    "inflation_radius": (0.1, 0.6),
}
INTEGER_PARAMS = frozenset({"vx_samples", "vtheta_samples"})
PARAM_NAMES = tuple(PARAM_BOUNDS)


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _affine(name: str, a: float) -> float:
    # anchored at the nearer bound so that -1 and +1 land exactly on lo and hi
    lo, hi = PARAM_BOUNDS[name]
    if a <= 0.0:
        return lo + 0.5 * (a + 1.0) * (hi - lo)
    return hi - 0.5 * (1.0 - a) * (hi - lo)


@dataclass(frozen=True)
class PlannerConfig:
    """DWA run-time parameters; the defaults are the bound midpoints."""

    max_vel_x: float = _affine("max_vel_x", 0.0)
    max_vel_theta: float = _affine("max_vel_theta", 0.0)
    vx_samples: int = 8
    vtheta_samples: int = 24
    path_distance_bias: float = _affine("path_distance_bias", 0.0)
    goal_distance_bias: float = _affine("goal_distance_bias", 0.0)
    inflation_radius: float = _affine("inflation_radius", 0.0)

    @classmethod
    def from_normalized(cls, action: Sequence[float]) -> PlannerConfig:
        """Affine map from [-1, 1]^7 onto the parameter bounds (inputs clipped first)."""
        a = np.clip(np.asarray(action, dtype=float).reshape(-1), -1.0, 1.0)
        if a.size != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} action values, got {a.size}")
        values = {}
        for ai, name in zip(a, PARAM_NAMES):
            lo, hi = PARAM_BOUNDS[name]
            v = _affine(name, float(ai))
            if name in INTEGER_PARAMS:
                v = min(max(_round_half_away(v), int(lo)), int(hi))
            else:
                v = min(max(v, lo), hi)
            values[name] = v
        return cls(**values)

    def normalized(self) -> np.ndarray:
        out = np.empty(len(PARAM_NAMES))
        for i, name in enumerate(PARAM_NAMES):
            lo, hi = PARAM_BOUNDS[name]
            out[i] = 2.0 * (getattr(self, name) - lo) / (hi - lo) - 1.0
        return out

    def clamped(self) -> PlannerConfig:
        values = {}
        for f in fields(self):
            lo, hi = PARAM_BOUNDS[f.name]
            v = getattr(self, f.name)
            if f.name in INTEGER_PARAMS:
                v = min(max(_round_half_away(float(v)), int(lo)), int(hi))
            else:
                v = min(max(float(v), lo), hi)
            values[f.name] = v
        return PlannerConfig(**values)

    def is_within_bounds(self) -> bool:
        return self == self.clamped() and all(
            isinstance(getattr(self, n), int) for n in INTEGER_PARAMS)

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RolloutTraj:
    poses: np.ndarray  # (steps, 3): x, y, heading
    v: float
    omega: float
    feasible: bool
    path_cost: float = math.nan
    goal_cost: float = math.nan
    obstacle_cost: float = math.nan
    total_cost: float = math.nan


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Every sampled velocity pair with its rollout and cost terms."""

    v: np.ndarray
    omega: np.ndarray
    xs: np.ndarray  # (n, steps)
    ys: np.ndarray
    ws: np.ndarray
    feasible: np.ndarray
    path_cost: np.ndarray
    goal_cost: np.ndarray
    obstacle_cost: np.ndarray
    total_cost: np.ndarray

    def __len__(self) -> int:
        return len(self.v)


def velocity_window(config: PlannerConfig, current_vel: tuple[float, float],
                    accel_limits: tuple[float, float] = (ACCEL_V, ACCEL_OMEGA),
                    dt: float = CONTROL_DT) -> tuple[tuple[float, float], tuple[float, float]]:
    v_cur, w_cur = current_vel
    a_v, a_w = accel_limits
    v_hi = min(config.max_vel_x, v_cur + a_v * dt)
    v_lo = max(0.0, v_cur - a_v * dt)
    w_hi = min(config.max_vel_theta, w_cur + a_w * dt)
    w_lo = max(-config.max_vel_theta, w_cur - a_w * dt)
    # a freshly lowered cap can sit below the reachable window; honour the cap
    v_lo = min(v_lo, v_hi)
    if w_lo > w_hi:
        w_lo = w_hi = min(max(w_cur, -config.max_vel_theta), config.max_vel_theta)
    return (v_lo, v_hi), (w_lo, w_hi)


def sample_window(config: PlannerConfig, current_vel: tuple[float, float],
                  accel_limits: tuple[float, float] = (ACCEL_V, ACCEL_OMEGA),
                  dt: float = CONTROL_DT) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian product of uniform v and omega samples over the dynamic window.

    Returns flat ``(v, omega)`` arrays of length ``vx_samples * vtheta_samples``
    with v varying slowest.
    """
    (v_lo, v_hi), (w_lo, w_hi) = velocity_window(config, current_vel, accel_limits, dt)
    vs = np.linspace(v_lo, v_hi, int(config.vx_samples))
    ws = np.linspace(w_lo, w_hi, int(config.vtheta_samples))
    vv, ww = np.meshgrid(vs, ws, indexing="ij")
    return vv.reshape(-1), ww.reshape(-1)


def rollout(pose: Pose, v: float, omega: float, costmap: Costmap | None = None,
            horizon_s: float = HORIZON_S, dt: float = CONTROL_DT) -> RolloutTraj:
    """Forward-simulate a constant command; infeasible if any pose lands on a lethal cell."""
    steps = int(round(horizon_s / dt))
    cmd = Command(v, omega)
    poses = np.empty((steps, 3))
    p = pose
    for k in range(steps):
        p = step_kinematics(p, cmd, dt)
        poses[k] = p.as_tuple()
    feasible = True
    if costmap is not None:
        feasible = bool((costmap.cost_at(poses[:, 0], poses[:, 1]) < 1.0).all())
    return RolloutTraj(poses=poses, v=float(v), omega=float(omega), feasible=feasible)


def score(traj: RolloutTraj, costmap: Costmap, goal_xy: tuple[float, float],
          path: GlobalPath, config: PlannerConfig) -> RolloutTraj:
    """Weighted cost of a feasible rollout; lower is better."""
    if not traj.feasible:
        raise ValueError("cannot score an infeasible rollout")
    ex, ey = traj.poses[-1, 0], traj.poses[-1, 1]
    wp = path.waypoints
    path_d = float(np.sqrt(((wp[:, 0] - ex) ** 2 + (wp[:, 1] - ey) ** 2).min()))
    goal_d = math.hypot(goal_xy[0] - ex, goal_xy[1] - ey)
    occ = float(costmap.cost_at(traj.poses[:, 0], traj.poses[:, 1]).max())
    pc = config.path_distance_bias * path_d
    gc = config.goal_distance_bias * goal_d
    oc = OCCDIST_SCALE * occ
    return RolloutTraj(poses=traj.poses, v=traj.v, omega=traj.omega, feasible=True,
                       path_cost=pc, goal_cost=gc, obstacle_cost=oc, total_cost=pc + gc + oc)


def evaluate_candidates(costmap: Costmap, pose: Pose, current_vel: tuple[float, float],
                        goal_xy: tuple[float, float], path: GlobalPath,
                        config: PlannerConfig) -> CandidateSet:
    config = config.clamped()
    v, om = sample_window(config, current_vel)
    steps = int(round(HORIZON_S / CONTROL_DT))
    n = v.size
    xs = np.empty((n, steps))
    ys = np.empty((n, steps))
    ws = np.empty((n, steps))
    x = np.full(n, pose.x)
    y = np.full(n, pose.y)
    w = np.full(n, pose.w)
    for k in range(steps):
        x, y, w = step_kinematics_batch(x, y, w, v, om, CONTROL_DT)
        xs[:, k], ys[:, k], ws[:, k] = x, y, w
    cost = costmap.cost_at(xs, ys)
    feasible = (cost < 1.0).all(axis=1)
    ex, ey = xs[:, -1], ys[:, -1]
    wp = path.waypoints
    d2 = (ex[:, None] - wp[None, :, 0]) ** 2 + (ey[:, None] - wp[None, :, 1]) ** 2
    path_cost = config.path_distance_bias * np.sqrt(d2.min(axis=1))
    goal_cost = config.goal_distance_bias * np.hypot(goal_xy[0] - ex, goal_xy[1] - ey)
    obstacle_cost = OCCDIST_SCALE * cost.max(axis=1)
    total = np.where(feasible, path_cost + goal_cost + obstacle_cost, np.inf)
    return CandidateSet(v=v, omega=om, xs=xs, ys=ys, ws=ws, feasible=feasible,
                        path_cost=path_cost, goal_cost=goal_cost,
                        obstacle_cost=obstacle_cost, total_cost=total)


def select_candidate(cands: CandidateSet) -> int | None:
    """Index of the cheapest feasible candidate.

    Costs within ``TIE_TOLERANCE`` of the minimum tie; ties go to larger v, then
    smaller |omega|, then the earliest sample.
    """
    if not cands.feasible.any():
        return None
    best = cands.total_cost.min()
    tied = np.nonzero(cands.total_cost <= best + TIE_TOLERANCE)[0]
    order = np.lexsort((tied, np.abs(cands.omega[tied]), -cands.v[tied]))
    return int(tied[order[0]])


def recovery_command(config: PlannerConfig) -> Command:
    return Command(0.0, config.clamped().max_vel_theta / 2.0)


def plan(costmap: Costmap, pose: Pose, current_vel: tuple[float, float],
         goal_xy: tuple[float, float], path: GlobalPath, config: PlannerConfig,
         recovery: bool = True) -> Command:
    """Command of the minimum-cost collision-free rollout.

    With no feasible rollout the robot rotates in place at half its angular
    cap, or stops when ``recovery`` is off.
    """
    cands = evaluate_candidates(costmap, pose, current_vel, goal_xy, path, config)
    i = select_candidate(cands)
    if i is None:
        return recovery_command(config) if recovery else Command(0.0, 0.0)
    return Command(float(cands.v[i]), float(cands.omega[i]))
