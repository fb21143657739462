"""The lane-change MDP on top of the simulator: observations, rewards, episodes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .actions import N_ACTIONS, ActionId
from .errors import ConfigError, StateError
from .sim import (
    ScenarioConfig,
    World,
    ego_collides,
    front_vehicle,
    meta_action_controller,
    spawn_scenario,
    step_world,
    ttc,
)

EGO_FEATURES = 5
SV_FEATURES = 5
SPEED_RANGE = 30.0
HEADING_RANGE = math.pi / 2
RELATIVE_RANGE = 100.0
DISTANCE_RANGE = 600.0


class Outcome(str, Enum):
    RUNNING = "running"
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class RewardConfig:
    w_success: float = 10.0
    w_failure: float = 10.0
    w_right: float = 1.0
    w_left: float = 1.0
    w_speed: float = 0.5
    w_safety: float = 1.0
    heading_eps: float = 0.02
    v_min: float = 20.0
    v_max: float = 30.0

    def __post_init__(self):
        weights = (self.w_success, self.w_failure, self.w_right, self.w_left, self.w_speed, self.w_safety)
        if any(w <= 0 for w in weights):
            raise ConfigError("reward weights must be positive")
        if self.heading_eps <= 0:
            raise ConfigError("heading_eps must be positive")
        if not self.v_min < self.v_max:
            raise ConfigError("need v_min < v_max")


@dataclass(frozen=True)
class EnvConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    observed_vehicles: int = 6
    episode_seconds: float = 20.0
    # simulator steps per decision; 1 = decide every dt
    action_repeat: int = 1

    def __post_init__(self):
        if self.observed_vehicles < 0:
            raise ConfigError("observed_vehicles must be >= 0")
        if self.action_repeat < 1:
            raise ConfigError("action_repeat must be >= 1")
        if self.episode_seconds <= 0:
            raise ConfigError("episode_seconds must be positive")


class RewardBreakdown(NamedTuple):
    mission: float
    lanechange: float
    speed: float
    safety: float


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    reward_breakdown: RewardBreakdown
    done: bool
    outcome: Outcome
    info: dict = field(default_factory=dict)


def observation_size(k: int) -> int:
    return EGO_FEATURES * (k + 1) + 4


def _unit(value: float, low: float, high: float) -> float:
    return min(max(2.0 * (value - low) / (high - low) - 1.0, -1.0), 1.0)


def _sym(value: float, span: float) -> float:
    return min(max(value / span, -1.0), 1.0)


def target_lane_onehot(ego_lane: int, target_lane: int) -> list[float]:
    diff = target_lane - ego_lane
    if diff < 0:
        return [1.0, 0.0, 0.0]
    if diff == 0:
        return [0.0, 1.0, 0.0]
    return [0.0, 0.0, 1.0]


def encode_observation(w: World, k: int = 6) -> np.ndarray:
    """Normalised state: ego (global), k nearest SVs (ego-relative), target distance, target-lane one-hot."""
    if k < 0:
        raise ConfigError("k must be >= 0")
    geo = w.geometry
    ego = w.ego
    obs = np.zeros(observation_size(k))
    obs[0] = _unit(ego.x, 0.0, geo.lane_length)
    obs[1] = _unit(ego.y, 0.0, geo.road_width)
    obs[2] = _sym(ego.v_x, SPEED_RANGE)
    obs[3] = _sym(ego.v_y, SPEED_RANGE)
    obs[4] = _sym(ego.heading, HEADING_RANGE)

    nearest = sorted(w.svs, key=lambda v: math.hypot(v.x - ego.x, v.y - ego.y))[:k]
    for slot, v in enumerate(nearest):
        base = EGO_FEATURES * (slot + 1)
        obs[base] = _sym(v.x - ego.x, RELATIVE_RANGE)
        obs[base + 1] = _sym(v.y - ego.y, RELATIVE_RANGE)
        obs[base + 2] = _sym(v.v_x - ego.v_x, SPEED_RANGE)
        obs[base + 3] = _sym(v.v_y - ego.v_y, SPEED_RANGE)
        obs[base + 4] = _sym(v.heading, HEADING_RANGE)

    tx, tlane = w.target
    d = math.hypot(tx - ego.x, geo.lane_center(tlane) - ego.y)
    obs[-4] = _unit(d, 0.0, DISTANCE_RANGE)
    obs[-3:] = target_lane_onehot(ego.lane_index, tlane)
    return obs


def classify_terminal(w: World, episode_seconds: float = 20.0) -> Outcome:
    if w.ego_active and ego_collides(w):
        return Outcome.COLLISION
    tx, tlane = w.target
    if w.ego.x >= tx and w.ego.lane_index == tlane:
        return Outcome.SUCCESS
    if w.step_count >= round(episode_seconds / w.dt):
        return Outcome.TIMEOUT
    return Outcome.RUNNING


def speed_reward(v: float, cfg: RewardConfig) -> float:
    if cfg.v_min <= v <= cfg.v_max:
        return cfg.w_speed * (v - cfg.v_min) / (cfg.v_max - cfg.v_min)
    return 0.0


def safety_reward(w: World, cfg: RewardConfig) -> float:
    ego = w.ego
    front = front_vehicle(w, ego.lane_index)
    if front is None or ego.v_x <= 0:
        return 0.0
    distance = math.hypot(front.x - ego.x, front.y - ego.y)
    if distance / ego.v_x >= 1.0:
        return 0.0
    t = ttc(ego, front)
    if math.isinf(t):
        return 0.0
    return -cfg.w_safety / max(0.1, t)


def compute_reward(w: World, cfg: RewardConfig, outcome: Optional[Outcome] = None) -> tuple[float, RewardBreakdown]:
    """Reward of the state reached after a decision."""
    if outcome is None:
        outcome = classify_terminal(w)
    if outcome == Outcome.SUCCESS:
        mission = cfg.w_success
    elif outcome in (Outcome.COLLISION, Outcome.TIMEOUT):
        mission = -cfg.w_failure
    else:
        mission = 0.0

    heading = w.ego.heading
    if heading > cfg.heading_eps:
        lanechange = cfg.w_right
    elif heading < -cfg.heading_eps:
        lanechange = -cfg.w_left
    else:
        lanechange = 0.0

    parts = RewardBreakdown(mission, lanechange, speed_reward(w.ego.speed, cfg), safety_reward(w, cfg))
    return sum(parts), parts


class HighwayEnv:
    """Episode interface: ``reset(seed)`` then ``step(action)`` until ``done``."""

    n_actions = N_ACTIONS

    def __init__(self, config: EnvConfig = EnvConfig()):
        self.config = config
        self.world: Optional[World] = None
        self._done = True

    @property
    def obs_dim(self) -> int:
        return observation_size(self.config.observed_vehicles)

    def reset(self, seed: int) -> np.ndarray:
        self.world = spawn_scenario(seed, self.config.scenario)
        self._done = False
        return encode_observation(self.world, self.config.observed_vehicles)

    def snapshot(self) -> World:
        if self.world is None:
            raise StateError("reset() must be called first")
        return self.world

    def step(self, action) -> StepOutcome:
        if self.world is None or self._done:
            raise StateError("step() called on a terminated or unstarted episode")
        action = ActionId(int(action))
        w = self.world
        cfg = self.config
        outcome = Outcome.RUNNING
        for _ in range(cfg.action_repeat):
            cmd = meta_action_controller(
                w.ego, action, w.ego_target_lane, w.ego_target_speed, w.geometry, w.gains
            )
            w.ego_target_lane, w.ego_target_speed = cmd.target_lane, cmd.target_speed
            step_world(w, cmd.control)
            outcome = classify_terminal(w, cfg.episode_seconds)
            if outcome != Outcome.RUNNING:
                break
            # the decision is applied once; later repeats hold the targets
            action = ActionId.IDLE
        reward, parts = compute_reward(w, cfg.reward, outcome)
        self._done = outcome != Outcome.RUNNING
        obs = encode_observation(w, cfg.observed_vehicles)
        return StepOutcome(obs, reward, parts, self._done, outcome, {"world": w})
