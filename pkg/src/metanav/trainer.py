"""Meta-planner training with high-resistance up-sampling of initial poses.

Each iteration collects K episodes, refreshing the high-resistance area after
every episode, then runs L policy updates. With probability ``lam`` an episode
starts from a random high-resistance pose instead of the map's default start.
Several maps can be trained on at once; the area and the random-sampling pool
are then kept per map, since a pose only means something on its own map.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from metanav.checkpoint import config_hash, load_checkpoint, save_checkpoint
from metanav.diagnosis import DiagnosisConfig, HighResistanceArea, Trajectory, get_hr_area
from metanav.env import EnvConfig, EpisodeLog, MetaEnv
from metanav.global_plan import GoalPlanner
from metanav.metrics import MetricsReport, aggregate
from metanav.ppo import PPOAgent, PPOParams, RolloutStore, ppo_update
from metanav.rollouts import EVENT_OUTCOME, PolicyController, run_episode
from metanav.td3 import InsufficientDataError, ReplayBuffer, TD3Agent, TD3Params, Transition, td3_update
from metanav.world import OccupancyGrid, Pose

ALGORITHMS = ("td3", "ppo")
HR_REFRESH_MODES = ("episode", "round")
REPORT_FIELDS = ("iteration", "mean_return", "eval_return", "NS", "SR", "CR", "TR", "|H|",
                 "config_hash")

Agent = TD3Agent | PPOAgent


@dataclass(frozen=True)
class TrainerConfig:
    lam: float = 0.4
    eta_deg: float = 90.0
    min_segment_m: float = 1e-6
    N: int = 100
    K: int = 10
    L: int = 50
    algorithm: str = "td3"
    rs_mode: bool = False
    filter_failures: bool = True
    seed: int = 0
    hr_refresh: str = "episode"
    td3: TD3Params = field(default_factory=TD3Params)
    ppo: PPOParams = field(default_factory=PPOParams)

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if min(self.N, self.K, self.L) < 1:
            raise ValueError("N, K and L must all be at least 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.hr_refresh not in HR_REFRESH_MODES:
            raise ValueError(f"hr_refresh must be one of {HR_REFRESH_MODES}")
        DiagnosisConfig(math.radians(self.eta_deg), self.min_segment_m)

    @property
    def diagnosis(self) -> DiagnosisConfig:
        return DiagnosisConfig(math.radians(self.eta_deg), self.min_segment_m)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> TrainerConfig:
        d = dict(d)
        td3 = TD3Params(**d.pop("td3", {}))
        ppo = PPOParams(**d.pop("ppo", {}))
        return cls(td3=td3, ppo=ppo, **d)


@dataclass(frozen=True)
class TrainingSetup:
    """The maps trained on and the environment settings shared by all episodes."""

    grids: tuple[OccupancyGrid, ...]
    env_config: EnvConfig = EnvConfig()

    def __post_init__(self) -> None:
        if not self.grids:
            raise ValueError("at least one training map is required")
        object.__setattr__(self, "grids", tuple(self.grids))

    def describe(self) -> dict[str, Any]:
        return {"maps": [[g.difficulty.value, g.seed, g.width, g.height] for g in self.grids],
                "env": asdict(self.env_config)}


def run_hash(config: TrainerConfig, setup: TrainingSetup) -> str:
    return config_hash({"trainer": config.to_json(), "setup": setup.describe()})


def make_agent(config: TrainerConfig, rng: np.random.Generator) -> Agent:
    if config.algorithm == "td3":
        return TD3Agent(rng, config.td3)
    return PPOAgent(rng, config.ppo)


# ---------------------------------------------------------------- pose sampling

def sample_init_pose(H: Sequence[Pose] | HighResistanceArea, lam: float, default_pose: Pose,
                     rng: np.random.Generator,
                     validator: Callable[[Pose], bool] | None = None) -> Pose:
    """Default pose, or with probability ``lam`` a uniform element of a non-empty ``H``.

    The gate's uniform draw is taken on every call so that runs differing only
    in ``lam`` consume the random stream identically while ``H`` is empty.
    """
    u = rng.random()
    points = tuple(H)
    if u < lam and points:
        p = points[int(rng.integers(len(points)))]
        if validator is None or validator(p):
            return p
    return default_pose


def refresh_hr(H_old: HighResistanceArea, trajectories: Sequence[Trajectory],
               diag_config: DiagnosisConfig, filter_failures: bool = True) -> HighResistanceArea:
    candidate = get_hr_area(trajectories, diag_config, filter_failures)
    return candidate if candidate else H_old


# ---------------------------------------------------------------- collection

@dataclass
class CollectedEpisode:
    map_index: int
    init_pose: Pose
    states: list[np.ndarray]
    actions: list[np.ndarray]
    rewards: list[float]
    dones: list[bool]
    log_probs: list[float]
    values: list[float]
    trajectory: Trajectory
    log: EpisodeLog

    @property
    def total_return(self) -> float:
        return math.fsum(self.rewards)

    def transitions(self) -> list[Transition]:
        return [Transition(self.states[t], self.actions[t], self.rewards[t], self.states[t + 1],
                           self.dones[t]) for t in range(len(self.rewards))]


def run_training_episode(agent: Agent, env: MetaEnv, init_pose: Pose,
                         rng: np.random.Generator, source: int, map_index: int = 0,
                         log_extra: dict[str, Any] | None = None) -> CollectedEpisode:
    """One exploratory episode; noise is applied to the normalised action."""
    s = env.reset(init_pose).as_array()
    states, actions, rewards, dones, logps, values = [s], [], [], [], [], []
    done = False
    while not done:
        if isinstance(agent, PPOAgent):
            a, logp, v = agent.act(s, rng)
            logps.append(logp)
            values.append(v)
        else:
            a = agent.act(s, rng)
        res = env.step(a)
        s = res.next_state.as_array()
        done = res.done
        states.append(s)
        actions.append(np.asarray(a, dtype=float))
        rewards.append(res.reward)
        dones.append(done)
    traj = Trajectory(tuple(env.poses), EVENT_OUTCOME[env.event], source)
    log = EpisodeLog.from_env(env, **(log_extra or {}))
    return CollectedEpisode(map_index, init_pose, states, actions, rewards, dones, logps, values,
                            traj, log)


@dataclass
class RoundResult:
    episodes: list[CollectedEpisode]
    hr: list[HighResistanceArea]

    @property
    def trajectories(self) -> list[Trajectory]:
        return [e.trajectory for e in self.episodes]

    @property
    def transitions(self) -> list[Transition]:
        return [t for e in self.episodes for t in e.transitions()]


class Trainer:
    """Stateful training loop; ``train`` drives it and writes the artifacts."""

    def __init__(self, config: TrainerConfig, setup: TrainingSetup, workers: int = 1) -> None:
        self.config = config
        self.workers = workers
        self.setup = setup
        self.hash = run_hash(config, setup)
        ss = np.random.SeedSequence(config.seed % 2**64)
        init_ss, pose_ss, explore_ss, update_ss = ss.spawn(4)
        self.rng_pose = np.random.default_rng(pose_ss)
        self.rng_explore = np.random.default_rng(explore_ss)
        self.rng_update = np.random.default_rng(update_ss)
        self.agent: Agent = make_agent(config, np.random.default_rng(init_ss))
        self.goal_planners = [GoalPlanner(g, robot_radius=setup.env_config.robot_radius)
                              for g in setup.grids]
        self.envs = [MetaEnv(g, setup.env_config, goal_planner=gp)
                     for g, gp in zip(setup.grids, self.goal_planners)]
        n_maps = len(setup.grids)
        self.hr = [HighResistanceArea() for _ in range(n_maps)]
        self.pool: list[list[Pose]] = [[] for _ in range(n_maps)]
        self.buffer = ReplayBuffer(config.td3.buffer_size) if config.algorithm == "td3" else None
        self.iteration = 0
        self.episode_count = 0
        self.report: list[dict[str, Any]] = []

    # -- collection ------------------------------------------------------

    def _start_pose(self, m: int) -> Pose:
        env = self.envs[m]
        default = self.setup.grids[m].start_pose()
        source: Sequence[Pose] = self.pool[m] if self.config.rs_mode else self.hr[m]
        return sample_init_pose(source, self.config.lam, default, self.rng_pose,
                                env.is_valid_start)

    def collect_round(self) -> RoundResult:
        cfg = self.config
        n_maps = len(self.envs)
        episodes: list[CollectedEpisode] = []
        for k in range(cfg.K):
            m = self.episode_count % n_maps
            init = self._start_pose(m)
            ep = run_training_episode(
                self.agent, self.envs[m], init, self.rng_explore, source=self.episode_count,
                map_index=m, log_extra={"config_hash": self.hash, "iteration": self.iteration + 1,
                                        "episode": self.episode_count, "map_index": m})
            self.episode_count += 1
            episodes.append(ep)
            if self.buffer is not None:
                self.buffer.extend(ep.transitions())
            if not cfg.rs_mode and cfg.hr_refresh == "episode":
                self.hr[m] = refresh_hr(self.hr[m], [ep.trajectory], cfg.diagnosis,
                                        cfg.filter_failures)
        if not cfg.rs_mode and cfg.hr_refresh == "round":
            for m in range(n_maps):
                trajs = [e.trajectory for e in episodes if e.map_index == m]
                self.hr[m] = refresh_hr(self.hr[m], trajs, cfg.diagnosis, cfg.filter_failures)
        if cfg.rs_mode:
            # the pool only grows after the round, so a round samples from earlier rounds
            for e in episodes:
                self.pool[e.map_index].extend(e.trajectory.poses)
        return RoundResult(episodes, list(self.hr))

    # -- updates ---------------------------------------------------------

    def update_policy(self, round_result: RoundResult) -> dict[str, float]:
        cfg = self.config
        if isinstance(self.agent, TD3Agent):
            assert self.buffer is not None
            stats: dict[str, float] = {"updates": 0.0}
            for _ in range(cfg.L):
                try:
                    out = td3_update(self.buffer, self.agent, self.rng_update)
                except InsufficientDataError:
                    break
                stats["updates"] += 1
                stats["critic_loss"] = out["critic_loss"]
            return stats
        store = RolloutStore(self.agent.version)
        for ep in round_result.episodes:
            for t in range(len(ep.rewards)):
                store.add(ep.states[t], ep.actions[t], ep.log_probs[t], ep.values[t],
                          ep.rewards[t], ep.dones[t])
        # L gradient steps in total, spread over the configured epochs
        minibatches = max(1, cfg.L // cfg.ppo.epochs)
        return ppo_update(store, self.agent, self.rng_update, minibatches)

    # -- evaluation ------------------------------------------------------

    def evaluate(self) -> tuple[MetricsReport, float]:
        """Greedy episodes from each map's default start."""
        ctrl = PolicyController(self.agent)
        if self.workers > 1:
            from metanav.suite import EpisodeJob, run_jobs
            jobs = [EpisodeJob("policy", (), g, None, 0) for g in self.setup.grids]
            records = run_jobs({"policy": ctrl}, jobs, self.setup.env_config, self.workers)
        else:
            records = [run_episode(ctrl, g, None, 0, self.setup.env_config, goal_planner=gp)
                       for g, gp in zip(self.setup.grids, self.goal_planners)]
        rep = aggregate(records)
        return rep, math.fsum(r.total_return for r in records) / len(records)

    def _report_row(self, iteration: int, mean_return: float | None) -> dict[str, Any]:
        rep, eval_return = self.evaluate()
        return {"iteration": iteration, "mean_return": mean_return, "eval_return": eval_return,
                "NS": rep.NS, "SR": rep.SR, "CR": rep.CR, "TR": rep.TR,
                "|H|": sum(len(h) for h in self.hr), "config_hash": self.hash}

    def step_iteration(self) -> tuple[RoundResult, dict[str, Any]]:
        rr = self.collect_round()
        self.update_policy(rr)
        self.iteration += 1
        mean_ret = math.fsum(e.total_return for e in rr.episodes) / len(rr.episodes)
        row = self._report_row(self.iteration, mean_ret)
        self.report.append(row)
        return rr, row

    def baseline_row(self) -> dict[str, Any]:
        row = self._report_row(0, None)
        self.report.append(row)
        return row

    # -- state -----------------------------------------------------------

    def state(self) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
        arrays = {f"agent.{k}": v for k, v in self.agent.state_arrays().items()}
        if self.buffer is not None:
            n = self.buffer.size
            for name in ("s", "a", "r", "s_next", "done"):
                arrays[f"buffer.{name}"] = getattr(self.buffer, name)[:n]
        meta = {
            "kind": "training_state", "config_hash": self.hash,
            "config": self.config.to_json(), "iteration": self.iteration,
            "episode_count": self.episode_count,
            "buffer_ptr": self.buffer.ptr if self.buffer is not None else 0,
            "rng": {name: getattr(self, name).bit_generator.state
                    for name in ("rng_pose", "rng_explore", "rng_update")},
            "hr": [_hr_json(h) for h in self.hr],
            "pool": [[list(p.as_tuple()) for p in pool] for pool in self.pool],
            "report": self.report,
        }
        return arrays, meta

    def policy_state(self) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
        arrays = {f"agent.{k}": v for k, v in self.agent.state_arrays().items()}
        meta = {"kind": "policy", "algorithm": self.config.algorithm,
                "config_hash": self.hash, "iteration": self.iteration}
        return arrays, meta

    def load_state(self, arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> None:
        if meta.get("config_hash") != self.hash:
            raise ValueError(f"checkpoint config hash {meta.get('config_hash')} does not match "
                             f"this run's {self.hash}")
        self.agent.load_state_arrays({k[len("agent."):]: v for k, v in arrays.items()
                                      if k.startswith("agent.")})
        if self.buffer is not None:
            n = arrays["buffer.r"].shape[0]
            for name in ("s", "a", "r", "s_next", "done"):
                getattr(self.buffer, name)[:n] = arrays[f"buffer.{name}"]
            self.buffer.size = n
            self.buffer.ptr = int(meta["buffer_ptr"])
        for name, st in meta["rng"].items():
            getattr(self, name).bit_generator.state = st
        self.hr = [_hr_from_json(h) for h in meta["hr"]]
        self.pool = [[Pose(*p) for p in pool] for pool in meta["pool"]]
        self.iteration = int(meta["iteration"])
        self.episode_count = int(meta["episode_count"])
        self.report = list(meta["report"])


def _hr_json(h: HighResistanceArea) -> dict[str, Any]:
    return {"points": [list(p.as_tuple()) for p in h.points],
            "origins": [list(o) for o in h.origins]}


def _hr_from_json(d: dict[str, Any]) -> HighResistanceArea:
    return HighResistanceArea(tuple(Pose(*p) for p in d["points"]),
                              tuple((int(a), int(b)) for a, b in d["origins"]))


def load_policy(path: str | Path) -> Agent:
    """Rebuild an agent from a policy or training-state checkpoint."""
    arrays, meta = load_checkpoint(path)
    algo = meta.get("algorithm") or meta["config"]["algorithm"]
    cfg = TrainerConfig(algorithm=algo)
    agent = make_agent(cfg, np.random.default_rng(0))
    agent.load_state_arrays({k[len("agent."):]: v for k, v in arrays.items()
                             if k.startswith("agent.")})
    return agent


# ---------------------------------------------------------------- driver

@dataclass
class TrainingResult:
    agent: Agent
    report: list[dict[str, Any]]
    hr: list[HighResistanceArea]
    config_hash: str


def report_csv(rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(REPORT_FIELDS), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row[k]) for k in REPORT_FIELDS})
    return buf.getvalue()


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def train(config: TrainerConfig, setup: TrainingSetup, out_dir: str | Path | None = None,
          resume: bool = False, progress: Callable[[dict[str, Any]], None] | None = None,
          workers: int = 1) -> TrainingResult:
    """Run (or resume) a full training job, writing artifacts when ``out_dir`` is given.

    Artifacts: ``checkpoints/iter_NNNN.ckpt`` (policy), ``state.ckpt`` (latest
    full training state, used by ``resume``), ``logs/iter_NNNN.jsonl``,
    ``hr/iter_NNNN.jsonl`` and ``report.csv``. Collection is always serial
    (each episode's start can depend on the previous episode's diagnosis);
    ``workers`` only parallelises the per-iteration evaluation episodes.
    """
    trainer = Trainer(config, setup, workers)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        for sub in ("checkpoints", "logs", "hr"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    if resume:
        if out is None or not (out / "state.ckpt").exists():
            raise FileNotFoundError("nothing to resume: no state.ckpt in the output directory")
        trainer.load_state(*load_checkpoint(out / "state.ckpt"))
    if trainer.iteration == 0 and not trainer.report:
        row = trainer.baseline_row()
        if progress:
            progress(row)
    while trainer.iteration < config.N:
        rr, row = trainer.step_iteration()
        if progress:
            progress(row)
        if out is not None:
            tag = f"iter_{trainer.iteration:04d}"
            with open(out / "logs" / f"{tag}.jsonl", "w") as fp:
                for ep in rr.episodes:
                    ep.log.write(fp)
            with open(out / "hr" / f"{tag}.jsonl", "w") as fp:
                write_hr_snapshot(fp, trainer.hr, setup.grids, trainer.hash)
            save_checkpoint(out / "checkpoints" / f"{tag}.ckpt", *trainer.policy_state())
            save_checkpoint(out / "state.ckpt", *trainer.state())
            (out / "report.csv").write_text(report_csv(trainer.report))
    return TrainingResult(trainer.agent, trainer.report, trainer.hr, trainer.hash)


def write_hr_snapshot(fp: io.TextIOBase, hr: Sequence[HighResistanceArea],
                      grids: Sequence[OccupancyGrid], chash: str) -> None:
    for m, (h, g) in enumerate(zip(hr, grids)):
        for p, (src, idx) in zip(h.points, h.origins):
            fp.write(json.dumps({"x": p.x, "y": p.y, "w": p.w, "source_episode": src,
                                 "index": idx, "map_index": m, "map_seed": g.seed,
                                 "config_hash": chash}, sort_keys=True) + "\n")

