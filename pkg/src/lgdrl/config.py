"""Run configuration: nested dataclasses loaded from and written to TOML.

Unknown keys are rejected at every level. A resolved config is written next
to each run's outputs and its hash goes into the run summary.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .env import EnvConfig, RewardConfig
from .errors import ConfigError
from .expert import LlmConfig, OracleConfig
from .guardian import GuardianConfig
from .learner.agent import TrainerConfig
from .sim import ScenarioConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class EnvSettings:
    observed_vehicles: int = 6
    episode_seconds: float = 20.0
    action_repeat: int = 1


@dataclass(frozen=True)
class ExpertSettings:
    kind: str = "oracle"  # "oracle" or "llm"
    kappa: float = 0.05
    oracle: OracleConfig = field(default_factory=OracleConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)

    def __post_init__(self):
        if self.kind not in ("oracle", "llm"):
            raise ConfigError(f"expert.kind must be 'oracle' or 'llm', got {self.kind!r}")
        if not 0.0 <= self.kappa <= 0.2:
            raise ConfigError("expert.kappa must lie in [0, 0.2]")


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 50
    seed: int = 10_000

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    label: str = "run"
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    # training episodes whose trajectories are written as replay files
    capture_replay: tuple[int, ...] = ()
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    env: EnvSettings = field(default_factory=EnvSettings)
    guardian: GuardianConfig = field(default_factory=GuardianConfig)
    expert: ExpertSettings = field(default_factory=ExpertSettings)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            scenario=self.scenario,
            reward=self.reward,
            observed_vehicles=self.env.observed_vehicles,
            episode_seconds=self.env.episode_seconds,
            action_repeat=self.env.action_repeat,
        )


# ---------------------------------------------------------------------------
# dict <-> dataclass


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        (item, *_) = typing.get_args(tp)
        return tuple(_coerce(item, v, f"{where}[{i}]") for i, v in enumerate(value))
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table, got {value!r}")
        return from_dict(tp, value, where)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            choices = ", ".join(m.value for m in tp)
            raise ConfigError(f"{where}: {value!r} is not one of {choices}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {tp!r}")


def from_dict(cls, data: dict, where: str = ""):
    """Build dataclass ``cls`` from a nested dict; unknown keys are an error."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{where}.{key}" if where else key)
    return cls(**kwargs)


def to_dict(obj) -> dict:
    """Plain nested dict of a dataclass (enums as values, tuples as lists, None dropped)."""
    out: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if value is None:
            continue
        out[f.name] = _plain(value)
    return out


def _plain(value):
    if dataclasses.is_dataclass(value):
        return to_dict(value)
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# files


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    version = data.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config_version {version}")
    return from_dict(RunConfig, data)


def dumps_config(cfg: RunConfig) -> str:
    return tomli_w.dumps({"config_version": CONFIG_VERSION, **to_dict(cfg)})


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg), encoding="utf-8")


def config_hash(cfg) -> str:
    canonical = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def override(cfg, **changes):
    """``dataclasses.replace`` that skips ``None`` values."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(cfg, **changes) if changes else cfg


__all__ = [
    "CONFIG_VERSION",
    "EnvSettings",
    "EvalSettings",
    "ExpertSettings",
    "RunConfig",
    "config_hash",
    "dumps_config",
    "from_dict",
    "load_config",
    "override",
    "save_config",
    "to_dict",
]
