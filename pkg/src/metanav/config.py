"""JSON run configuration with strict key checking."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from metanav.checkpoint import config_hash
from metanav.env import EnvConfig
from metanav.ppo import PPOParams
from metanav.suite import DEFAULT_EPISODES, SETUPS, MapPool
from metanav.td3 import TD3Params
from metanav.trainer import TrainerConfig, TrainingSetup
from metanav.world import Difficulty, generate_map


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldSection:
    difficulty: str = "medium"
    train_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    test_seeds: tuple[int, ...] = (100, 101, 102, 103, 104)
    width_m: float = 10.0
    height_m: float = 10.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "difficulty", Difficulty.parse(self.difficulty).value)
        object.__setattr__(self, "train_seeds", tuple(int(s) for s in self.train_seeds))
        object.__setattr__(self, "test_seeds", tuple(int(s) for s in self.test_seeds))
        if not self.train_seeds:
            raise ConfigError("world.train_seeds must not be empty")
        if self.width_m < 5.0 or self.height_m < 5.0:
            raise ConfigError("world maps must be at least 5 m x 5 m")

    def pool(self) -> MapPool:
        return MapPool(self.difficulty, self.train_seeds, self.test_seeds, self.width_m,
                       self.height_m)


@dataclass(frozen=True)
class DiagnosisSection:
    eta_deg: float = 90.0
    min_segment_m: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 < self.eta_deg <= 180.0:
            raise ConfigError(f"diagnosis.eta_deg must lie in (0, 180], got {self.eta_deg}")
        if self.min_segment_m <= 0:
            raise ConfigError("diagnosis.min_segment_m must be positive")


@dataclass(frozen=True)
class TrainerSection:
    lam: float = 0.4
    N: int = 100
    K: int = 10
    L: int = 50
    algorithm: str = "td3"
    rs_mode: bool = False
    filter_failures: bool = True
    hr_refresh: str = "episode"
    td3: TD3Params = field(default_factory=TD3Params)
    ppo: PPOParams = field(default_factory=PPOParams)


@dataclass(frozen=True)
class EvalSection:
    setup: str = "same-env"
    episodes: int = DEFAULT_EPISODES

    def __post_init__(self) -> None:
        if self.setup not in SETUPS:
            raise ConfigError(f"eval.setup must be one of {SETUPS}, got {self.setup!r}")
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    world: WorldSection = field(default_factory=WorldSection)
    env: EnvConfig = field(default_factory=EnvConfig)
    diagnosis: DiagnosisSection = field(default_factory=DiagnosisSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    out_dir: str = "runs/default"

    def trainer_config(self) -> TrainerConfig:
        t = asdict(self.trainer)
        t["td3"], t["ppo"] = self.trainer.td3, self.trainer.ppo
        try:
            return TrainerConfig(eta_deg=self.diagnosis.eta_deg,
                                 min_segment_m=self.diagnosis.min_segment_m,
                                 seed=self.seed, **t)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def training_setup(self) -> TrainingSetup:
        w = self.world
        grids = tuple(generate_map(w.difficulty, s, w.width_m, w.height_m) for s in w.train_seeds)
        return TrainingSetup(grids, self.env)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    def hash(self) -> str:
        """Hash of everything that affects results; the output location is excluded."""
        d = self.to_json()
        d.pop("out_dir")
        return config_hash(d)

    def with_overrides(self, **sections: dict[str, Any]) -> RunConfig:
        """Copy with per-section field overrides, e.g. ``trainer={"lam": 0.0}``."""
        changes: dict[str, Any] = {}
        for name, values in sections.items():
            if name in ("seed", "out_dir"):
                changes[name] = values
                continue
            current = getattr(self, name)
            try:
                changes[name] = replace(current, **values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        out = replace(self, **changes)
        out.trainer_config()
        return out


def _build(cls: type, data: Any, path: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f" in section '{path}'" if path else ""
        raise ConfigError(f"unknown key(s) {unknown}{where}")
    defaults = cls()
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        sub = getattr(defaults, name)
        key = f"{path}.{name}" if path else name
        if is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, key)
        elif isinstance(sub, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{key} must be a list")
            kwargs[name] = tuple(value)
        else:
            if isinstance(sub, bool) != isinstance(value, bool) or (
                    isinstance(sub, (int, float)) and not isinstance(value, (int, float))) or (
                    isinstance(sub, str) and not isinstance(value, str)):
                raise ConfigError(f"{key} has the wrong type: {value!r}")
            if isinstance(sub, int) and not isinstance(sub, bool) and isinstance(value, float):
                if not value.is_integer():
                    raise ConfigError(f"{key} must be an integer")
                value = int(value)
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def load_run_config(source: str | Path | dict[str, Any] | None) -> RunConfig:
    if source is None:
        cfg = RunConfig()
    else:
        data = json.loads(Path(source).read_text()) if isinstance(source, (str, Path)) else source
        cfg = _build(RunConfig, data, "")
    cfg.trainer_config()  # cross-section validation
    return cfg
