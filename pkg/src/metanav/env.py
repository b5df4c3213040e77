"""Episodic meta-planning environment.

Each step takes a normalised planner configuration, runs the DWA controller
for one meta period, and returns the next observation and a shaped reward.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Any, Callable, Sequence

import numpy as np

from metanav import dwa
from metanav.dwa import PlannerConfig
from metanav.global_plan import NOMINAL_V_MAX, GlobalPath, GoalPlanner, local_goal
from metanav.world import (
    ROBOT_RADIUS,
    Command,
    Costmap,
    OccupancyGrid,
    Pose,
    Scan,
    cast_scan,
    check_collision,
    inflate,
    step_kinematics,
)

SCAN_FEATURES = 72
CONFIG_DIM = len(dwa.PARAM_NAMES)
STATE_DIM = SCAN_FEATURES + 1 + CONFIG_DIM
ACTION_DIM = CONFIG_DIM

LocalPlannerFn = Callable[..., Command]


class Event(str, Enum):
    NONE = "none"
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"


class InvalidStartError(ValueError):
    pass


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    meta_period_s: float = 1.0
    control_dt_s: float = 0.1
    max_meta_steps: int = 100
    goal_tolerance_m: float = 0.5
    k_progress: float = 1.0
    k_step: float = 0.05
    r_goal: float = 20.0
    r_collision: float = -20.0
    r_timeout: float = -10.0
    gamma: float = 0.99
    lookahead_m: float = 1.5
    robot_radius: float = ROBOT_RADIUS
    recovery: bool = True

    def __post_init__(self) -> None:
        ratio = self.meta_period_s / self.control_dt_s
        if self.control_dt_s <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("meta_period_s must be a positive integer multiple of control_dt_s")
        if self.max_meta_steps < 1:
            raise ValueError("max_meta_steps must be at least 1")

    @property
    def control_steps(self) -> int:
        return int(round(self.meta_period_s / self.control_dt_s))


@dataclass(frozen=True, eq=False)
class MetaState:
    scan_features: np.ndarray
    phi: float
    prev_config: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.scan_features, [self.phi], self.prev_config])

    @classmethod
    def from_array(cls, a: np.ndarray) -> MetaState:
        a = np.asarray(a, dtype=float)
        if a.shape != (STATE_DIM,):
            raise ValueError(f"state must have shape ({STATE_DIM},)")
        return cls(a[:SCAN_FEATURES].copy(), float(a[SCAN_FEATURES]),
                   a[SCAN_FEATURES + 1:].copy())


@dataclass(frozen=True, eq=False)
class StepResult:
    next_state: MetaState
    reward: float
    done: bool
    event: Event
    pose: Pose


def scan_features(scan: Scan, n_out: int = SCAN_FEATURES) -> np.ndarray:
    """Min-pool the beams into ``n_out`` windows and scale by the range cap."""
    r = np.asarray(scan.ranges, dtype=float)
    if r.size % n_out:
        raise ValueError(f"{r.size} beams do not split into {n_out} windows")
    return np.clip(r.reshape(n_out, -1).min(axis=1) / scan.max_range, 0.0, 1.0)


def decode_action(action: Sequence[float]) -> PlannerConfig:
    return PlannerConfig.from_normalized(action)


def compute_reward(d_prev: float, d_curr: float, event: Event,
                   config: EnvConfig = EnvConfig()) -> float:
    r = config.k_progress * (d_prev - d_curr) - config.k_step
    if event is Event.GOAL:
        r += config.r_goal
    elif event is Event.COLLISION:
        r += config.r_collision
    elif event is Event.TIMEOUT:
        r += config.r_timeout
    return r


@dataclass
class StepRecord:
    t: int
    pose: Pose
    action: np.ndarray
    reward: float
    event: Event

    def to_json(self) -> dict[str, Any]:
        return {"t": self.t, "pose": list(self.pose.as_tuple()),
                "action": [float(a) for a in self.action],
                "reward": float(self.reward), "event": self.event.value}


class MetaEnv:
    """Meta-planning MDP over one map and goal."""

    def __init__(self, grid: OccupancyGrid, config: EnvConfig = EnvConfig(),
                 goal: tuple[int, int] | None = None,
                 local_planner: LocalPlannerFn = dwa.plan,
                 goal_planner: GoalPlanner | None = None) -> None:
        self.grid = grid
        self.config = config
        self.goal_planner = goal_planner or GoalPlanner(grid, goal, config.robot_radius)
        self.goal_xy = grid.cell_center(*self.goal_planner.goal)
        self.local_planner = local_planner
        self.path: GlobalPath | None = None
        self.costmap: Costmap | None = None
        self.planner_config = PlannerConfig()
        self.pose: Pose | None = None
        self.init_pose: Pose | None = None
        self.velocity = (0.0, 0.0)
        self.t = 0
        self.done = True
        self.event = Event.NONE
        self.poses: list[Pose] = []
        self.records: list[StepRecord] = []
        self.optimal_time = math.nan
        self._path_index = 0

    def validate_start(self, pose: Pose) -> None:
        if not self.grid.in_bounds(pose.x, pose.y):
            raise InvalidStartError(f"start pose {pose} is off the map")
        if check_collision(self.grid, pose, self.config.robot_radius):
            raise InvalidStartError(f"start pose {pose} is in collision")
        r, c = self.grid.cell_of(pose.x, pose.y)
        if self.grid.distance_field[r, c] <= self.config.robot_radius:
            raise InvalidStartError(f"start pose {pose} lies on a lethal costmap cell")

    def is_valid_start(self, pose: Pose) -> bool:
        try:
            self.validate_start(pose)
        except InvalidStartError:
            return False
        return True

    def reset(self, init_pose: Pose | None = None) -> MetaState:
        pose = self.grid.start_pose() if init_pose is None else init_pose
        self.validate_start(pose)
        self.path = self.goal_planner.path_from_pose(pose)
        self.optimal_time = self.path.length_m / NOMINAL_V_MAX
        self.planner_config = PlannerConfig()
        self.costmap = inflate(self.grid, self.planner_config.inflation_radius,
                               self.config.robot_radius)
        self.pose = pose
        self.init_pose = pose
        self.velocity = (0.0, 0.0)
        self.t = 0
        self.done = False
        self.event = Event.NONE
        self.poses = [pose]
        self.records = []
        self._path_index = 0
        return self.observe()

    def observe(self) -> MetaState:
        pose = self.pose
        assert pose is not None and self.path is not None
        eps = 1e-9
        inside = Pose(min(max(pose.x, 0.0), self.grid.width_m - eps),
                      min(max(pose.y, 0.0), self.grid.height_m - eps), pose.w)
        feats = scan_features(cast_scan(self.grid, inside))
        lg = local_goal(self.path, pose, self.config.lookahead_m, self._path_index)
        return MetaState(feats, lg.phi, self.planner_config.normalized())

    def goal_distance(self, pose: Pose | None = None) -> float:
        p = self.pose if pose is None else pose
        assert p is not None
        return math.hypot(self.goal_xy[0] - p.x, self.goal_xy[1] - p.y)

    def step(self, action: Sequence[float]) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("episode is finished; call reset()")
        assert self.pose is not None and self.path is not None and self.costmap is not None
        action = np.clip(np.asarray(action, dtype=float).reshape(-1), -1.0, 1.0)
        cfg = decode_action(action)
        if cfg.inflation_radius != self.costmap.inflation_radius:
            self.costmap = inflate(self.grid, cfg.inflation_radius, self.config.robot_radius)
        self.planner_config = cfg
        d_prev = self.goal_distance()
        event = Event.NONE
        pose = self.pose
        for _ in range(self.config.control_steps):
            lg = local_goal(self.path, pose, self.config.lookahead_m, self._path_index)
            self._path_index = lg.nearest_index
            cmd = self.local_planner(self.costmap, pose, self.velocity, lg.point, self.path,
                                     cfg, recovery=self.config.recovery)
            pose = step_kinematics(pose, cmd, self.config.control_dt_s)
            self.velocity = (cmd.v, cmd.omega)
            if check_collision(self.grid, pose, self.config.robot_radius):
                event = Event.COLLISION
                break
            if self.goal_distance(pose) <= self.config.goal_tolerance_m:
                event = Event.GOAL
                break
        self.pose = pose
        self.t += 1
        if event is Event.NONE and self.t >= self.config.max_meta_steps:
            event = Event.TIMEOUT
        reward = compute_reward(d_prev, self.goal_distance(), event, self.config)
        self.done = event is not Event.NONE
        self.event = event
        self.poses.append(pose)
        self.records.append(StepRecord(self.t, pose, action, reward, event))
        return StepResult(self.observe(), reward, self.done, event, pose)

    def log_header(self, **extra: Any) -> dict[str, Any]:
        assert self.init_pose is not None
        head = {"map_seed": self.grid.seed, "difficulty": self.grid.difficulty.value,
                "init_pose": list(self.init_pose.as_tuple()),
                "goal": list(self.goal_xy), "OT": self.optimal_time}
        head.update(extra)
        return head


@dataclass
class EpisodeLog:
    header: dict[str, Any]
    records: list[dict[str, Any]] = field(default_factory=list)

    @classmethod
    def from_env(cls, env: MetaEnv, **extra: Any) -> EpisodeLog:
        return cls(env.log_header(**extra), [r.to_json() for r in env.records])

    def write(self, fp: IO[str]) -> None:
        fp.write(json.dumps({"header": self.header}, sort_keys=True) + "\n")
        for rec in self.records:
            fp.write(json.dumps(rec, sort_keys=True) + "\n")

    @property
    def outcome_event(self) -> Event:
        return Event(self.records[-1]["event"]) if self.records else Event.NONE

    def poses(self) -> list[Pose]:
        out = [Pose(*self.header["init_pose"])]
        out.extend(Pose(*r["pose"]) for r in self.records)
        return out


class LogFormatError(ValueError):
    pass


def read_episode_logs(lines: Sequence[str] | IO[str], source: str = "<log>") -> list[EpisodeLog]:
    """Parse concatenated episode logs; malformed lines raise with their line number."""
    logs: list[EpisodeLog] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"{source}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise LogFormatError(f"{source}:{lineno}: expected a JSON object")
        if "header" in obj:
            head = obj["header"]
            if not isinstance(head, dict) or "init_pose" not in head:
                raise LogFormatError(f"{source}:{lineno}: header lacks init_pose")
            logs.append(EpisodeLog(head))
            continue
        missing = {"t", "pose", "action", "reward", "event"} - obj.keys()
        if missing:
            raise LogFormatError(f"{source}:{lineno}: record missing {sorted(missing)}")
        if not logs:
            raise LogFormatError(f"{source}:{lineno}: step record before any header")
        pose = obj["pose"]
        if not (isinstance(pose, list) and len(pose) == 3):
            raise LogFormatError(f"{source}:{lineno}: pose must be [x, y, w]")
        try:
            Event(obj["event"])
        except ValueError:
            raise LogFormatError(f"{source}:{lineno}: unknown event {obj['event']!r}") from None
        logs[-1].records.append(obj)
    return logs
