"""Evaluation suites, baselines, ablation sweeps and report artifacts."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from metanav.diagnosis import HighResistanceArea
from metanav.dwa import PlannerConfig
from metanav.env import EnvConfig, MetaEnv
from metanav.global_plan import GoalPlanner, Unreachable
from metanav.metrics import EpisodeRecord, MetricsReport, aggregate, navigation_score, reports_to_csv
from metanav.rollouts import Controller, PolicyController, StaticController, run_episode
from metanav.trainer import TrainerConfig, TrainingResult, TrainingSetup, run_hash, train
from metanav.world import Difficulty, OccupancyGrid, Pose, generate_map

SETUPS = ("same-env", "cross-env", "cross-level")
SWEEP_PARAMS = ("lambda", "eta", "filter_failures")
DEFAULT_EPISODES = 40
LAMBDA_GRID = (0.2, 0.4, 0.6, 0.8)
ETA_GRID_DEG = (50.0, 70.0, 90.0, 110.0, 130.0)
STATIC_TUNER_TRIALS = 64

# held-out starts are drawn from this band at the left of the map
_START_BAND_X = (0.5, 2.5)
_START_BAND_Y = (0.3, 0.7)
_START_HEADING_SPREAD = math.pi / 4
_START_DRAWS = 200


class SuiteError(ValueError):
    pass


# ---------------------------------------------------------------- baselines

def dwa_baseline() -> PlannerConfig:
    return PlannerConfig()


def dwa_fast_baseline() -> PlannerConfig:
    return replace(PlannerConfig(), max_vel_x=2.0)


def static_tuner(grids: Sequence[OccupancyGrid], seed: int = 0,
                 trials: int = STATIC_TUNER_TRIALS,
                 env_config: EnvConfig = EnvConfig()) -> tuple[PlannerConfig, float]:
    """Best of ``trials`` random configurations by mean NS from the default starts."""
    rng = np.random.default_rng(seed)
    planners = [GoalPlanner(g, robot_radius=env_config.robot_radius) for g in grids]
    best: tuple[PlannerConfig, float] | None = None
    for _ in range(trials):
        cfg = PlannerConfig.from_normalized(rng.uniform(-1.0, 1.0, size=7))
        recs = [run_episode(StaticController(cfg), g, None, 0, env_config, goal_planner=gp)
                for g, gp in zip(grids, planners)]
        ns = aggregate(recs).NS
        if best is None or ns > best[1]:
            best = (cfg, ns)
    assert best is not None
    return best


# ---------------------------------------------------------------- start poses

def held_out_starts(grid: OccupancyGrid, count: int, seed: int,
                    env_config: EnvConfig = EnvConfig(),
                    goal_planner: GoalPlanner | None = None) -> list[Pose]:
    """Valid, goal-reachable start poses near the left edge, excluding the default start."""
    gp = goal_planner or GoalPlanner(grid, robot_radius=env_config.robot_radius)
    env = MetaEnv(grid, env_config, goal_planner=gp)
    default = grid.start_pose()
    rng = np.random.default_rng(np.random.SeedSequence([grid.seed % 2**64, seed % 2**64]))
    out: list[Pose] = []
    for _ in range(_START_DRAWS * max(count, 1)):
        if len(out) == count:
            break
        x = rng.uniform(*_START_BAND_X)
        y = rng.uniform(*_START_BAND_Y) * grid.height_m
        w = rng.uniform(-_START_HEADING_SPREAD, _START_HEADING_SPREAD)
        p = Pose(x, y, w)
        if p == default or not env.is_valid_start(p):
            continue
        try:
            gp.path_from_pose(p)
        except Unreachable:
            continue
        out.append(p)
    if len(out) < count:
        raise SuiteError(f"could only find {len(out)} of {count} start poses on map {grid.seed}")
    return out


# ---------------------------------------------------------------- suites

@dataclass(frozen=True)
class MapPool:
    difficulty: str
    train_seeds: tuple[int, ...]
    test_seeds: tuple[int, ...]
    width_m: float = 10.0
    height_m: float = 10.0

    def grids(self, seeds: Iterable[int], difficulty: str | None = None) -> list[OccupancyGrid]:
        d = difficulty or self.difficulty
        return [generate_map(d, s, self.width_m, self.height_m) for s in seeds]


@dataclass(frozen=True)
class EpisodeJob:
    controller: str
    labels: tuple[tuple[str, str], ...]
    grid: OccupancyGrid
    init_pose: Pose | None
    seed: int


@dataclass
class SuiteResult:
    rows: list[tuple[dict[str, str], MetricsReport]] = field(default_factory=list)
    records: list[tuple[dict[str, str], EpisodeRecord]] = field(default_factory=list)
    grids: dict[tuple[str, int], OccupancyGrid] = field(default_factory=dict)


def _run_job(args: tuple[Controller, EpisodeJob, EnvConfig]) -> EpisodeRecord:
    ctrl, job, env_config = args
    return run_episode(ctrl, job.grid, job.init_pose, job.seed, env_config)


def run_jobs(controllers: Mapping[str, Controller], jobs: Sequence[EpisodeJob],
             env_config: EnvConfig = EnvConfig(), workers: int = 1) -> list[EpisodeRecord]:
    """Run episodes, in parallel when ``workers > 1``; results keep job order."""
    args = [(controllers[j.controller], j, env_config) for j in jobs]
    if workers <= 1:
        return [_run_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, args, chunksize=max(1, len(args) // (4 * workers))))


def _condition_jobs(name: str, labels: dict[str, str], grids: Sequence[OccupancyGrid],
                    episodes: int, seed: int, held_out_only: bool,
                    env_config: EnvConfig) -> list[EpisodeJob]:
    m = len(grids)
    per_map = [episodes // m + (1 if i < episodes % m else 0) for i in range(m)]
    starts: list[list[Pose | None]] = []
    for g, n in zip(grids, per_map):
        if held_out_only:
            starts.append(list(held_out_starts(g, n, seed, env_config)))
        else:
            extra = held_out_starts(g, max(n - 1, 0), seed, env_config) if n > 1 else []
            starts.append(([None] if n else []) + list(extra))
    jobs = []
    lab = tuple(sorted(labels.items()))
    for i in range(episodes):
        k, j = i % m, i // m
        jobs.append(EpisodeJob(name, lab, grids[k], starts[k][j], seed + i))
    return jobs


def run_suite(setup: str, controllers: Mapping[str, Controller], pool: MapPool,
              episodes: int = DEFAULT_EPISODES, seed: int = 0,
              env_config: EnvConfig = EnvConfig(), workers: int = 1) -> SuiteResult:
    """One report per (controller, test condition).

    same-env: training maps, held-out start poses. cross-env: unseen maps of the
    training difficulty. cross-level: unseen maps at each of the three levels.
    """
    if setup not in SETUPS:
        raise SuiteError(f"unknown setup {setup!r}; expected one of {SETUPS}")
    if not controllers:
        raise SuiteError("no controllers to evaluate")
    if setup == "cross-env":
        overlap = set(pool.train_seeds) & set(pool.test_seeds)
        if overlap:
            raise SuiteError(f"cross-env train and test seeds overlap: {sorted(overlap)}")
    if setup == "same-env":
        conditions = [(pool.difficulty, pool.grids(pool.train_seeds), True)]
    elif setup == "cross-env":
        conditions = [(pool.difficulty, pool.grids(pool.test_seeds), False)]
    else:
        conditions = [(d.value, pool.grids(pool.test_seeds, d.value), False) for d in Difficulty]
    for _, grids, _ in conditions:
        if not grids:
            raise SuiteError("the map pool has no maps for this setup")

    jobs: list[EpisodeJob] = []
    for name in controllers:
        for diff, grids, held_out in conditions:
            labels = {"controller": name, "setup": setup, "difficulty": diff}
            jobs.extend(_condition_jobs(name, labels, grids, episodes, seed, held_out,
                                        env_config))
    records = run_jobs(controllers, jobs, env_config, workers)
    result = SuiteResult()
    grouped: dict[tuple[tuple[str, str], ...], list[EpisodeRecord]] = {}
    for job, rec in zip(jobs, records):
        result.grids.setdefault((rec.difficulty, rec.map_seed), job.grid)
        grouped.setdefault(job.labels, []).append(rec)
        result.records.append((dict(job.labels), rec))
    for lab, recs in grouped.items():
        result.rows.append((dict(lab), aggregate(recs)))
    return result


# ---------------------------------------------------------------- ablations

def sweep_config(parameter: str, value: Any, base: TrainerConfig) -> TrainerConfig:
    if parameter == "lambda":
        return replace(base, lam=float(value))
    if parameter == "eta":
        return replace(base, eta_deg=float(value))
    if parameter == "filter_failures":
        return replace(base, filter_failures=parse_bool(value))
    raise SuiteError(f"unknown ablation parameter {parameter!r}; expected one of {SWEEP_PARAMS}")


def parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in ("1", "true", "on", "yes"):
        return True
    if s in ("0", "false", "off", "no"):
        return False
    raise SuiteError(f"not a boolean: {value!r}")


def evaluate_policy(agent: Any, grids: Sequence[OccupancyGrid],
                    env_config: EnvConfig = EnvConfig()) -> list[EpisodeRecord]:
    """Greedy episodes from each map's default start."""
    ctrl = PolicyController(agent)
    return [run_episode(ctrl, g, None, 0, env_config) for g in grids]


@dataclass
class SweepEntry:
    value: Any
    config: TrainerConfig
    report: MetricsReport
    runs: list[TrainingResult]
    records: list[EpisodeRecord]


TrainFn = Callable[[TrainerConfig, TrainingSetup], TrainingResult]


def cached_train(cache: dict[str, TrainingResult] | None = None) -> TrainFn:
    """``train`` memoised on the run hash, so sweeps sharing a config reuse it."""
    store = {} if cache is None else cache

    def run(config: TrainerConfig, setup: TrainingSetup) -> TrainingResult:
        key = run_hash(config, setup)
        if key not in store:
            store[key] = train(config, setup)
        return store[key]
    return run


def ablation_sweep(parameter: str, values: Sequence[Any], base_config: TrainerConfig,
                   setup: TrainingSetup, seeds: Sequence[int] = (0,),
                   train_fn: TrainFn | None = None) -> list[SweepEntry]:
    """Train one policy per (value, seed), everything else fixed, and evaluate each."""
    if parameter not in SWEEP_PARAMS:
        raise SuiteError(f"unknown ablation parameter {parameter!r}; expected one of {SWEEP_PARAMS}")
    run = train_fn or (lambda c, s: train(c, s))
    out = []
    for value in values:
        cfg = sweep_config(parameter, value, base_config)
        runs, records = [], []
        for seed in seeds:
            res = run(replace(cfg, seed=int(seed)), setup)
            runs.append(res)
            records.extend(evaluate_policy(res.agent, setup.grids, setup.env_config))
        out.append(SweepEntry(value, cfg, aggregate(records), runs, records))
    return out


def sweep_csv(parameter: str, entries: Sequence[SweepEntry], setup: TrainingSetup) -> str:
    rows = [({parameter: _value_str(e.value), "config_hash": run_hash(e.config, setup)},
             e.report) for e in entries]
    return reports_csv(rows)


def _value_str(v: Any) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


# ---------------------------------------------------------------- artifacts

def reports_csv(rows: Sequence[tuple[Mapping[str, str], MetricsReport]]) -> str:
    return reports_to_csv([(dict(labels), rep) for labels, rep in rows])


def records_jsonl(records: Sequence[tuple[Mapping[str, str], EpisodeRecord]],
                  extra: Mapping[str, Any] | None = None) -> str:
    lines = []
    for labels, rec in records:
        d = {**dict(labels), **rec.to_json(), "NS": navigation_score(rec), **(extra or {})}
        lines.append(json.dumps(d, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def write_suite(result: SuiteResult, out_dir: str | Path, config_hash: str,
                hr: HighResistanceArea | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [({**labels, "config_hash": config_hash}, rep) for labels, rep in result.rows]
    paths = [out / "report.csv", out / "episodes.jsonl"]
    paths[0].write_text(reports_csv(rows))
    paths[1].write_text(records_jsonl(result.records, {"config_hash": config_hash}))
    if result.records:
        first = result.records[0][1]
        grid = result.grids.get((first.difficulty, first.map_seed)) or generate_map(
            first.difficulty, first.map_seed)
        trajs = [r.trajectory for _, r in result.records
                 if r.map_seed == first.map_seed and r.difficulty == first.difficulty]
        svg = overlay_svg(grid, trajs, hr.points if hr else (), config_hash)
        paths.append(out / "overlay.svg")
        paths[2].write_text(svg)
    return paths


def overlay_svg(grid: OccupancyGrid, trajectories: Sequence[Sequence[tuple[float, float, float]]],
                hr_points: Sequence[Pose] = (), config_hash: str = "", bins: int = 20,
                scale: float = 40.0) -> str:
    """Map, trajectories and H points, with per-axis histograms of visited positions."""
    wm, hm = grid.width_m, grid.height_m
    hist_h = 60.0
    W, H = wm * scale, hm * scale

    def sx(x: float) -> str:
        return f"{x * scale:.2f}"

    def sy(y: float) -> str:
        return f"{(hm - y) * scale:.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W + hist_h + 10:.0f}" '
             f'height="{H + hist_h + 10:.0f}">',
             f"<!-- config_hash={config_hash} -->",
             f'<rect x="0" y="0" width="{W:.2f}" height="{H:.2f}" fill="white" stroke="black"/>']
    cell = grid.resolution * scale
    for r in range(grid.height):
        row = grid.cells[r]
        c = 0
        while c < grid.width:
            if row[c]:
                c0 = c
                while c < grid.width and row[c]:
                    c += 1
                # row 0 is the bottom row of the map (y increases upward)
                y_top = (grid.height - 1 - r) * cell
                parts.append(f'<rect x="{c0 * cell:.2f}" y="{y_top:.2f}" '
                             f'width="{(c - c0) * cell:.2f}" height="{cell:.2f}" fill="#444"/>')
            else:
                c += 1
    xs, ys = [], []
    for traj in trajectories:
        if len(traj) > 1:
            pts = " ".join(f"{sx(p[0])},{sy(p[1])}" for p in traj)
            parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" '
                         f'stroke-opacity="0.6" stroke-width="1.5"/>')
        xs.extend(p[0] for p in traj)
        ys.extend(p[1] for p in traj)
    for p in hr_points:
        parts.append(f'<circle cx="{sx(p.x)}" cy="{sy(p.y)}" r="4" fill="#d62728"/>')
    if xs:
        hx, _ = np.histogram(xs, bins=bins, range=(0.0, wm))
        hy, _ = np.histogram(ys, bins=bins, range=(0.0, hm))
        peak = max(int(hx.max()), int(hy.max()), 1)
        bw, bh = W / bins, H / bins
        for i, n in enumerate(hx):
            h = hist_h * n / peak
            parts.append(f'<rect x="{i * bw:.2f}" y="{H + 5 + hist_h - h:.2f}" '
                         f'width="{bw:.2f}" height="{h:.2f}" fill="#999"/>')
        for i, n in enumerate(hy):
            w = hist_h * n / peak
            parts.append(f'<rect x="{W + 5:.2f}" y="{H - (i + 1) * bh:.2f}" '
                         f'width="{w:.2f}" height="{bh:.2f}" fill="#999"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def markdown_table(csv_text: str) -> str:
    """Markdown summary: one row per controller, NS/ATT/SR/CR/TR per condition."""
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    if not rows:
        raise SuiteError("report CSV has no rows")
    conds: list[str] = []
    ctrls: list[str] = []
    cells: dict[tuple[str, str], dict[str, str]] = {}
    for r in rows:
        cond = " / ".join(v for k, v in r.items()
                          if k in ("setup", "difficulty") and v) or "all"
        ctrl = r.get("controller") or next(
            (f"{k}={v}" for k, v in r.items() if k not in _NON_LABEL), "run")
        if cond not in conds:
            conds.append(cond)
        if ctrl not in ctrls:
            ctrls.append(ctrl)
        cells[(ctrl, cond)] = r
    metrics = ("NS", "ATT", "SR", "CR", "TR")
    head = ["Method"] + [f"{c} {m}" for c in conds for m in metrics]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for ctrl in ctrls:
        vals = [ctrl]
        for c in conds:
            r = cells.get((ctrl, c), {})
            vals.extend(_md_num(r.get(m, "")) for m in metrics)
        lines.append("| " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


_NON_LABEL = {"NS", "ATT", "SR", "CR", "TR", "episodes", "config_hash", "setup", "difficulty"}


def _md_num(s: str) -> str:
    if not s:
        return "-"
    try:
        return f"{float(s):.2f}"
    except ValueError:
        return s
