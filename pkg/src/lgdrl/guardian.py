"""Expert intervention during training.

An expert action replaces the agent's action only when the agent's action is
judged unsafe (TTC below threshold) *and* the current episode is one where
intervention is permitted.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional

import numpy as np

from .actions import LANE_CHANGES, ActionId
from .errors import ConfigError
from .expert import OracleConfig
from .sim import World, front_rear_ttc


class InterventionMode(str, Enum):
    INTERMITTENT = "intermittent"
    CONTINUOUS = "continuous"
    OFF = "off"


@dataclass(frozen=True)
class GuardianConfig:
    tau_ft: float = 3.0
    tau_rt: float = 2.0
    tau_f: float = 2.5
    tau_r: float = 2.0
    mode: InterventionMode = InterventionMode.INTERMITTENT
    permit_fraction: float = 0.5
    schedule_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", InterventionMode(self.mode))
        if min(self.tau_ft, self.tau_rt, self.tau_f, self.tau_r) <= 0:
            raise ConfigError("TTC thresholds must be positive")
        if not 0.0 <= self.permit_fraction <= 1.0:
            raise ConfigError("permit_fraction must lie in [0, 1]")

    def oracle_config(self, v_max: float = 30.0) -> OracleConfig:
        return OracleConfig(tau_ft=self.tau_ft, tau_rt=self.tau_rt, tau_f=self.tau_f, v_max=v_max)


@dataclass(frozen=True)
class InterventionRecord:
    step: int
    i1: int
    i2: int
    a_drl: ActionId
    a_llm: ActionId
    a_applied: ActionId

    @property
    def intervened(self) -> bool:
        return self.i1 == 1 and self.i2 == 1


def safety_indicator(w: World, a_drl: ActionId, cfg: GuardianConfig = GuardianConfig()) -> int:
    """1 when the agent's action is hazardous by the TTC criteria, else 0."""
    lane = w.ego.lane_index
    a_drl = ActionId(a_drl)
    if a_drl in LANE_CHANGES:
        target = lane - 1 if a_drl == ActionId.LEFT_LANE_CHANGE else lane + 1
        target = w.geometry.clamp_lane(target)
        t_front, t_rear = front_rear_ttc(w, target)
        return int(t_front < cfg.tau_ft or t_rear < cfg.tau_rt)
    t_front, t_rear = front_rear_ttc(w, lane)
    return int(t_front < cfg.tau_f or t_rear < cfg.tau_r)


def draw_permitted_episodes(seed: int, episodes: int, fraction: float) -> frozenset[int]:
    """Each episode index in [0, episodes) is permitted independently with ``fraction``."""
    if episodes <= 0:
        raise ConfigError("episodes must be positive")
    draws = np.random.default_rng(seed).random(episodes)
    return frozenset(int(i) for i in np.flatnonzero(draws < fraction))


def build_schedule(cfg: GuardianConfig, episodes: int, seed: int) -> frozenset[int]:
    if cfg.mode == InterventionMode.CONTINUOUS:
        return frozenset(range(episodes))
    if cfg.mode == InterventionMode.OFF:
        return frozenset()
    return draw_permitted_episodes(seed, episodes, cfg.permit_fraction)


def permission_indicator(episode: int, schedule: Iterable[int]) -> int:
    return int(episode in schedule)


def applied_action(a_drl: ActionId, a_llm: ActionId, i1: int, i2: int) -> ActionId:
    return ActionId(a_llm) if i1 * i2 == 1 else ActionId(a_drl)


class Guardian:
    """Per-run arbiter holding the config and the permitted-episode set."""

    def __init__(
        self,
        cfg: GuardianConfig,
        schedule: Iterable[int],
        safety: Optional[Callable[[object, ActionId], int]] = None,
    ):
        self.cfg = cfg
        self.schedule = frozenset(schedule)
        self._safety = safety or (lambda world, a: safety_indicator(world, a, cfg))

    def arbitrate(self, world, episode: int, step: int, a_drl: ActionId, a_llm: ActionId) -> InterventionRecord:
        i2 = permission_indicator(episode, self.schedule)
        i1 = self._safety(world, a_drl)
        return InterventionRecord(step, i1, i2, ActionId(a_drl), ActionId(a_llm), applied_action(a_drl, a_llm, i1, i2))
