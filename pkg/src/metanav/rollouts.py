"""Controllers and the single-episode runner used by training and evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from metanav import dwa
from metanav.diagnosis import Outcome
from metanav.dwa import PlannerConfig
from metanav.env import EnvConfig, Event, LocalPlannerFn, MetaEnv, MetaState
from metanav.global_plan import GoalPlanner
from metanav.metrics import EpisodeRecord
from metanav.world import OccupancyGrid, Pose

EVENT_OUTCOME = {Event.GOAL: Outcome.SUCCESS, Event.COLLISION: Outcome.COLLISION,
                 Event.TIMEOUT: Outcome.TIMEOUT}


class Controller(Protocol):
    name: str

    def action(self, state: MetaState, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class StaticController:
    """Holds one planner configuration for the whole episode."""

    config: PlannerConfig
    name: str = "static"

    def action(self, state: MetaState, rng: np.random.Generator) -> np.ndarray:
        return self.config.normalized()


@dataclass
class PolicyController:
    """Acts greedily with a trained agent's actor."""

    agent: object
    name: str = "policy"

    def action(self, state: MetaState, rng: np.random.Generator) -> np.ndarray:
        return self.agent.greedy(state.as_array())  # type: ignore[attr-defined]


def record_from_env(env: MetaEnv, total_return: float) -> EpisodeRecord:
    outcome = EVENT_OUTCOME[env.event]
    att = env.t * env.config.meta_period_s if outcome is Outcome.SUCCESS else None
    assert env.init_pose is not None
    return EpisodeRecord(
        map_seed=env.grid.seed, difficulty=env.grid.difficulty.value,
        init_pose=env.init_pose.as_tuple(), outcome=outcome, OT=env.optimal_time, ATT=att,
        steps=env.t, total_return=total_return,
        trajectory=tuple(p.as_tuple() for p in env.poses))


def run_episode(controller: Controller, grid: OccupancyGrid, init_pose: Pose | None = None,
                seed: int = 0, env_config: EnvConfig = EnvConfig(),
                goal_planner: GoalPlanner | None = None,
                local_planner: LocalPlannerFn = dwa.plan) -> EpisodeRecord:
    """Run one episode to termination; ``seed`` feeds stochastic controllers only."""
    env = MetaEnv(grid, env_config, local_planner=local_planner, goal_planner=goal_planner)
    rng = np.random.default_rng(seed)
    state = env.reset(init_pose)
    total = 0.0
    done = False
    while not done:
        res = env.step(controller.action(state, rng))
        total += res.reward
        state, done = res.next_state, res.done
    return record_from_env(env, total)
