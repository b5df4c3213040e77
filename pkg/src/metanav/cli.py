"""Command-line entry point: metanav {gen-maps,train,diagnose,eval,ablate,report}."""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from metanav.checkpoint import CheckpointError, config_hash
from metanav.config import ConfigError, RunConfig, load_run_config
from metanav.diagnosis import DiagnosisConfig, Outcome, Trajectory, get_hr_area
from metanav.env import Event, LogFormatError, read_episode_logs
from metanav.rollouts import Controller, PolicyController, StaticController
from metanav.suite import (
    SETUPS,
    SWEEP_PARAMS,
    SuiteError,
    ablation_sweep,
    cached_train,
    dwa_baseline,
    dwa_fast_baseline,
    markdown_table,
    run_suite,
    static_tuner,
    sweep_csv,
    write_suite,
)
from metanav.trainer import load_policy, train
from metanav.world import Difficulty, MapGenerationError, generate_map

BASELINES = ("dwa", "dwa-fast", "static-tuner")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"1-3,7"`` -> (1, 2, 3, 7)."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            i = part.index("-", 1)
            lo, hi = int(part[:i]), int(part[i + 1:])
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("no seeds given")
    return tuple(out)


def _seeds_arg(text: str) -> tuple[int, ...]:
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ---------------------------------------------------------------- commands

def cmd_gen_maps(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = {"command": "gen-maps", "difficulty": args.difficulty, "count": args.count,
              "seed": args.seed, "width_m": args.width, "height_m": args.height}
    chash = config_hash(params)
    files = []
    for seed in range(args.seed, args.seed + args.count):
        grid = generate_map(args.difficulty, seed, args.width, args.height)
        path = out / f"{args.difficulty}_{seed}.map"
        text = grid.to_text()
        path.write_text(text)
        files.append({"file": path.name, "seed": seed,
                      "sha256": hashlib.sha256(text.encode()).hexdigest()})
    # the map format has no room for metadata, so the hash lives in a manifest
    manifest = {"config_hash": chash, "params": params, "maps": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _log(f"wrote {args.count} maps to {out}")
    return 0


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config)
    trainer: dict[str, Any] = {}
    if getattr(args, "algo", None):
        trainer["algorithm"] = args.algo
    if getattr(args, "lam", None) is not None:
        trainer["lam"] = args.lam
    if getattr(args, "rs", False):
        trainer["rs_mode"] = True
    if getattr(args, "no_filter", False):
        trainer["filter_failures"] = False
    for flag, key in (("iterations", "N"), ("episodes_per_iter", "K"), ("updates", "L")):
        if getattr(args, flag, None) is not None:
            trainer[key] = getattr(args, flag)
    overrides: dict[str, Any] = {}
    if trainer:
        overrides["trainer"] = trainer
    if getattr(args, "eta", None) is not None:
        overrides["diagnosis"] = {"eta_deg": args.eta}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = str(args.out)
    world: dict[str, Any] = {}
    if getattr(args, "difficulty", None):
        world["difficulty"] = args.difficulty
    if getattr(args, "train_maps", None):
        world["train_seeds"] = args.train_maps
    if getattr(args, "maps", None):
        world["test_seeds"] = args.maps
    if world:
        overrides["world"] = world
    return cfg.with_overrides(**overrides) if overrides else cfg


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_run_config(args)
    out = Path(cfg.out_dir)
    tcfg = cfg.trainer_config()
    setup = cfg.training_setup()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({**cfg.to_json(), "config_hash": cfg.hash()}, indent=2, sort_keys=True) + "\n")

    def progress(row: dict[str, Any]) -> None:
        _log(f"iter {row['iteration']:4d}  NS {row['NS']:6.2f}  SR {row['SR']:6.2f}  "
             f"|H| {row['|H|']}")

    res = train(tcfg, setup, out, resume=args.resume, progress=progress, workers=args.workers)
    _log(f"training finished ({len(res.report) - 1} iterations, config {res.config_hash}); "
         f"artifacts in {out}")
    return 0


def _log_outcome(event: Event) -> Outcome:
    return {Event.GOAL: Outcome.SUCCESS, Event.COLLISION: Outcome.COLLISION}.get(
        event, Outcome.TIMEOUT)


def cmd_diagnose(args: argparse.Namespace) -> int:
    trajectories = []
    for path in args.logs:
        with open(path) as fp:
            logs = read_episode_logs(fp, str(path))
        for log in logs:
            if not log.records:
                continue
            src = int(log.header.get("episode", len(trajectories)))
            trajectories.append(Trajectory(tuple(log.poses()), _log_outcome(log.outcome_event),
                                           src))
    diag = DiagnosisConfig(math.radians(args.eta))
    filt = not args.no_filter
    hr = get_hr_area(trajectories, diag, filter_failures=filt)
    chash = config_hash({"command": "diagnose", "eta_deg": args.eta, "filter_failures": filt,
                         "min_segment_m": diag.min_segment_m})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "hr.jsonl", "w") as fp:
        for p, (src, idx) in zip(hr.points, hr.origins):
            fp.write(json.dumps({"x": p.x, "y": p.y, "w": p.w, "source_episode": src,
                                 "index": idx, "config_hash": chash}, sort_keys=True) + "\n")
    per_traj = [len(get_hr_area([t], diag, filter_failures=filt)) for t in trajectories]
    summary = {"config_hash": chash, "count": len(hr), "eta_deg": args.eta,
               "filter_failures": filt, "trajectories": len(trajectories),
               "per_trajectory": per_traj}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _log(f"{len(hr)} high-resistance points from {len(trajectories)} trajectories")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_run_config(args)
    controllers: dict[str, Controller] = {}
    for ck in args.checkpoint or []:
        path = Path(ck)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        name = path.stem if path.stem not in controllers else str(path)
        controllers[name] = PolicyController(load_policy(path), name)
    pool = cfg.world.pool()
    for b in args.baselines or []:
        if b == "dwa":
            controllers[b] = StaticController(dwa_baseline(), b)
        elif b == "dwa-fast":
            controllers[b] = StaticController(dwa_fast_baseline(), b)
        else:
            tuned, _ = static_tuner(pool.grids(pool.train_seeds), seed=cfg.seed,
                                    env_config=cfg.env)
            controllers[b] = StaticController(tuned, b)
    if not controllers:
        raise SuiteError("nothing to evaluate: pass --checkpoint and/or --baselines")
    setup = args.setup or cfg.eval.setup
    episodes = args.episodes or cfg.eval.episodes
    result = run_suite(setup, controllers, pool, episodes, cfg.seed, cfg.env, args.workers)
    chash = config_hash({"run": cfg.hash(), "setup": setup, "episodes": episodes,
                         "controllers": sorted(controllers),
                         "checkpoints": [_file_digest(Path(c)) for c in args.checkpoint or []]})
    paths = write_suite(result, cfg.out_dir, chash)
    _log(f"{len(result.rows)} report rows; wrote {', '.join(str(p) for p in paths)}")
    return 0


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _resolve_run_config(args)
    values: list[Any] = [v.strip() for v in args.values.split(",") if v.strip()]
    if args.param in ("lambda", "eta"):
        values = [float(v) for v in values]
    base = cfg.trainer_config()
    setup = cfg.training_setup()
    seeds = args.seeds or (cfg.seed,)
    entries = ablation_sweep(args.param, values, base, setup, seeds, cached_train())
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ablation_{args.param}.csv").write_text(sweep_csv(args.param, entries, setup))
    _log(f"{len(entries)} ablation reports written to {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    tables = [markdown_table(Path(p).read_text()) for p in args.inputs]
    text = "\n".join(tables)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser

def _difficulty(text: str) -> str:
    try:
        return Difficulty.parse(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--difficulty", type=_difficulty)
    p.add_argument("--train-maps", type=_seeds_arg, help="training map seeds, e.g. 0-4")


def _add_trainer_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", choices=("td3", "ppo"))
    p.add_argument("--lambda", dest="lam", type=float, help="up-sampling ratio (default 0.4)")
    p.add_argument("--eta", type=float, help="turn threshold in degrees (default 90)")
    p.add_argument("--rs", action="store_true", help="random-sampling ablation")
    p.add_argument("--no-filter", action="store_true", help="diagnose failed episodes too")
    p.add_argument("--iterations", type=int, help="training iterations N")
    p.add_argument("--episodes-per-iter", type=int, help="episodes per iteration K")
    p.add_argument("--updates", type=int, help="policy updates per iteration L")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metanav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-maps", help="generate seeded map files")
    g.add_argument("--difficulty", type=_difficulty, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--width", type=float, default=10.0)
    g.add_argument("--height", type=float, default=10.0)
    g.set_defaults(func=cmd_gen_maps)

    t = sub.add_parser("train", help="train a meta-planner policy")
    _add_run_options(t)
    _add_trainer_options(t)
    t.add_argument("--resume", action="store_true", help="continue from state.ckpt in --out")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("diagnose", help="find high-resistance points in episode logs")
    d.add_argument("--logs", type=Path, nargs="+", required=True)
    d.add_argument("--eta", type=float, default=90.0)
    d.add_argument("--no-filter", action="store_true")
    d.add_argument("--out", type=Path, required=True)
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("eval", help="run an evaluation suite")
    _add_run_options(e)
    e.add_argument("--setup", choices=SETUPS)
    e.add_argument("--checkpoint", nargs="+", type=Path)
    e.add_argument("--baselines", nargs="+", choices=BASELINES)
    e.add_argument("--maps", type=_seeds_arg, help="test map seeds, e.g. 100-104")
    e.add_argument("--episodes", type=int)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate across one parameter's values")
    _add_run_options(a)
    _add_trainer_options(a)
    a.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    a.add_argument("--values", required=True, help="comma-separated values")
    a.add_argument("--seeds", type=_seeds_arg, help="training seeds, e.g. 0-4")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="render report CSVs as a markdown table")
    r.add_argument("--inputs", nargs="+", type=Path, required=True)
    r.add_argument("--out", type=Path)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return int(args.func(args))
    except (ConfigError, SuiteError, LogFormatError, CheckpointError, MapGenerationError,
            FileNotFoundError, ValueError, OSError, json.JSONDecodeError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
