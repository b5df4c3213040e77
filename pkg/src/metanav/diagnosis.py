"""Behaviour-guided diagnosis of high-resistance areas.

A pose is a high-resistance point when the direction of travel turns by more
than ``eta`` between the segment leaving it and the next segment, on a
trajectory that reached its goal. Back-and-forth motion shows up as a turn of
pi even when the robot's heading barely changes, which is why travel
direction rather than heading is compared.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Sequence

from metanav.angles import wrap_to_pi
from metanav.world import Pose

DEFAULT_ETA = math.pi / 2.0
DEDUP_TOL = 1e-6


class Outcome(str, Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[Pose, ...]
    outcome: Outcome
    source: int = 0

    def __post_init__(self) -> None:
        if len(self.poses) < 1:
            raise ValueError("a trajectory needs at least one pose")
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "outcome", Outcome(self.outcome))


@dataclass(frozen=True)
class DiagnosisConfig:
    eta: float = DEFAULT_ETA
    min_segment_m: float = 1e-6

    def __post_init__(self) -> None:
        if not (0.0 < self.eta <= math.pi):
            raise ValueError(f"eta must lie in (0, pi], got {self.eta}")


@dataclass(frozen=True)
class HighResistanceArea:
    points: tuple[Pose, ...] = ()
    # (source trajectory id, pose index) for each point
    origins: tuple[tuple[int, int], ...] = field(default=())

    def __len__(self) -> int:
        return len(self.points)

    def __bool__(self) -> bool:
        return bool(self.points)

    def __iter__(self):
        return iter(self.points)

    def to_jsonl(self, fp: IO[str]) -> None:
        for p, (src, idx) in zip(self.points, self.origins):
            fp.write(json.dumps({"x": p.x, "y": p.y, "w": p.w,
                                 "source_episode": src, "index": idx}) + "\n")

    @classmethod
    def from_jsonl(cls, lines: Iterable[str]) -> HighResistanceArea:
        pts, origins = [], []
        for line in lines:
            if line.strip():
                d = json.loads(line)
                pts.append(Pose(d["x"], d["y"], d["w"]))
                origins.append((int(d.get("source_episode", 0)), int(d.get("index", 0))))
        return cls(tuple(pts), tuple(origins))


def segment_orientation(p_i: Pose, p_j: Pose, min_segment_m: float = 1e-6) -> float | None:
    """Direction of travel from ``p_i`` to ``p_j``; None for a (near) stationary step."""
    dx, dy = p_j.x - p_i.x, p_j.y - p_i.y
    if math.hypot(dx, dy) < min_segment_m:
        return None
    return math.atan2(dy, dx)


def orientation_changes(poses: Sequence[Pose],
                        min_segment_m: float = 1e-6) -> list[tuple[int, float]]:
    """``(i, delta_rho)`` for every triplet starting at pose i with two defined segments."""
    rho = [segment_orientation(poses[k], poses[k + 1], min_segment_m)
           for k in range(len(poses) - 1)]
    out = []
    for i in range(len(rho) - 1):
        a, b = rho[i], rho[i + 1]
        if a is None or b is None:
            continue
        out.append((i, wrap_to_pi(b - a)))
    return out


def _is_duplicate(p: Pose, seen: list[Pose]) -> bool:
    for q in seen:
        if (abs(p.x - q.x) <= DEDUP_TOL and abs(p.y - q.y) <= DEDUP_TOL
                and abs(wrap_to_pi(p.w - q.w)) <= DEDUP_TOL):
            return True
    return False


def get_hr_area(trajectories: Iterable[Trajectory], config: DiagnosisConfig = DiagnosisConfig(),
                filter_failures: bool = True) -> HighResistanceArea:
    """Collect high-resistance points from successful trajectories.

    ``filter_failures=False`` diagnoses every trajectory regardless of outcome,
    which is only meant for the filtering ablation.
    """
    points: list[Pose] = []
    origins: list[tuple[int, int]] = []
    for traj in trajectories:
        if filter_failures and traj.outcome is not Outcome.SUCCESS:
            continue
        for i, d_rho in orientation_changes(traj.poses, config.min_segment_m):
            if abs(d_rho) > config.eta:
                p = traj.poses[i]
                if not _is_duplicate(p, points):
                    points.append(p)
                    origins.append((traj.source, i))
    return HighResistanceArea(tuple(points), tuple(origins))
