"""Expert policies: a rule-based driving oracle and an LLM chat-endpoint expert.

Both implement ``advise(world) -> ExpertAdvice`` so the trainer can swap them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .actions import N_ACTIONS, ActionId
from .errors import ConfigError, EndpointError, FormatError
from .sim import VehicleState, World, front_rear_ttc, front_vehicle, lane_members

log = logging.getLogger(__name__)


class AdviceSource(str, Enum):
    ORACLE = "oracle"
    LLM = "llm"
    LLM_FALLBACK = "llm_fallback"
    CACHE = "cache"


@dataclass(frozen=True)
class ExpertAdvice:
    action: ActionId
    distribution: np.ndarray
    source: AdviceSource
    latency: float = 0.0


class ExpertPolicy(Protocol):
    def advise(self, world) -> ExpertAdvice: ...


def action_to_distribution(action: int, kappa: float = 0.05, n_actions: int = N_ACTIONS) -> np.ndarray:
    """Smoothed one-hot: 1 - kappa on ``action``, the rest spread evenly."""
    if not 0.0 <= kappa <= 0.2:
        raise ConfigError(f"kappa must lie in [0, 0.2], got {kappa}")
    dist = np.full(n_actions, kappa / (n_actions - 1))
    dist[int(action)] = 1.0 - kappa
    return dist


# ---------------------------------------------------------------------------
# Rule oracle


@dataclass(frozen=True)
class OracleConfig:
    tau_ft: float = 3.0
    tau_rt: float = 2.0
    tau_f: float = 2.5
    v_max: float = 30.0
    # Extra margins on top of the TTC rules. Centre-distance TTC is blind to
    # vehicles alongside that are not closing and tolerates tailgating, so the
    # guard also demands longitudinal clearance and a minimum time headway.
    # guard=False gives the bare TTC rules.
    guard: bool = True
    side_clearance: float = 12.0
    min_headway: float = 1.0


def _bumper_gap(rear: VehicleState, front: VehicleState) -> float:
    return front.x - rear.x - 0.5 * (front.length + rear.length)


def _lane_change_safe(w: World, lane: int, cfg: OracleConfig) -> bool:
    t_ft, t_rt = front_rear_ttc(w, lane)
    if t_ft < cfg.tau_ft or t_rt < cfg.tau_rt:
        return False
    if not cfg.guard:
        return True
    ego = w.ego
    for v in lane_members(w, lane):
        if abs(v.x - ego.x) < cfg.side_clearance:
            return False
    front = front_vehicle(w, lane)
    return front is None or _bumper_gap(ego, front) >= cfg.min_headway * ego.v_x


def _too_close(w: World, cfg: OracleConfig) -> bool:
    if not cfg.guard:
        return False
    ego = w.ego
    front = front_vehicle(w, ego.lane_index)
    return front is not None and _bumper_gap(ego, front) < cfg.min_headway * ego.v_x


def rule_oracle(w: World, cfg: OracleConfig = OracleConfig()) -> ActionId:
    """Prioritised rules: safe move toward the target lane, else keep a safe speed."""
    ego = w.ego
    lane = ego.lane_index
    target_lane = w.target[1]
    # with the guard on, a lane change already under way is not re-issued
    committed = cfg.guard and w.ego_target_lane != lane
    if lane != target_lane and not committed:
        step = 1 if target_lane > lane else -1
        if _lane_change_safe(w, lane + step, cfg):
            return ActionId.RIGHT_LANE_CHANGE if step > 0 else ActionId.LEFT_LANE_CHANGE
    t_f, _ = front_rear_ttc(w, lane)
    if t_f < cfg.tau_f or _too_close(w, cfg):
        return ActionId.DECELERATE
    if ego.speed < cfg.v_max - 1.0 and t_f >= 2.0 * cfg.tau_f and not _too_close(w, replace(cfg, min_headway=1.5 * cfg.min_headway)):
        return ActionId.ACCELERATE
    return ActionId.IDLE


class OracleExpert:
    def __init__(self, cfg: OracleConfig = OracleConfig(), kappa: float = 0.05):
        self.cfg = cfg
        self.kappa = kappa

    def advise(self, world: World) -> ExpertAdvice:
        start = time.perf_counter()
        action = rule_oracle(world, self.cfg)
        return ExpertAdvice(
            action, action_to_distribution(action, self.kappa), AdviceSource.ORACLE, time.perf_counter() - start
        )


# ---------------------------------------------------------------------------
# Prompting

SYSTEM_PROMPT = """You are an expert driver controlling the ego vehicle on a straight multi-lane highway.
Lanes are numbered from 0 (leftmost) upward; higher numbers are further right.
Your task is to reach the target point in the target lane within the time limit without any collision.

Available actions (use the exact token):
- LEFT_LANE_CHANGE: change to the adjacent left lane, speed unchanged
- IDLE: keep the current lane and speed
- RIGHT_LANE_CHANGE: change to the adjacent right lane, speed unchanged
- ACCELERATE: increase the target speed by 1 m/s
- DECELERATE: decrease the target speed by 1 m/s

Think step by step before deciding:
1. Locate the ego vehicle relative to the target lane and target point.
2. Check the vehicles ahead and behind in the current lane and in the adjacent lanes, using gaps and speed differences.
3. Judge whether a lane change toward the target lane is safe right now.
4. Judge whether the current speed is appropriate given the vehicle ahead and the speed limit.
5. Pick the single best action.

After your reasoning, finish with one final line of exactly this form:
Decision: <TOKEN>
where <TOKEN> is one of LEFT_LANE_CHANGE, IDLE, RIGHT_LANE_CHANGE, ACCELERATE, DECELERATE."""

CORRECTION_PROMPT = (
    "Your previous reply did not end with a valid decision line. Reply again and end with exactly one line "
    "of the form 'Decision: <TOKEN>' using one of LEFT_LANE_CHANGE, IDLE, RIGHT_LANE_CHANGE, ACCELERATE, DECELERATE."
)

NO_VEHICLES = "There are no surrounding vehicles nearby."


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    scenario_text: str


def _f(x: float) -> str:
    return f"{round(x, 1) + 0.0:.1f}"


def build_prompt(w: World, k: int = 6) -> PromptBundle:
    """Describe the scene in plain text: ego, K nearest vehicles, lanes and target."""
    geo = w.geometry
    ego = w.ego
    lines = [
        "Road: straight highway with "
        f"{geo.lane_count} lanes (0 = leftmost, {geo.lane_count - 1} = rightmost), lane width {_f(geo.lane_width)} m, "
        f"speed limit {_f(geo.speed_limit)} m/s.",
        f"Elapsed time: {_f(w.sim_time)} s.",
        "Ego vehicle: "
        f"lane {ego.lane_index}, position x={_f(ego.x)} m y={_f(ego.y)} m, "
        f"speed vx={_f(ego.v_x)} m/s vy={_f(ego.v_y)} m/s, heading {_f(ego.heading)} rad.",
    ]
    tx, tlane = w.target
    lines.append(
        f"Target: lane {tlane}, x={_f(tx)} m, which is {_f(tx - ego.x)} m ahead of the ego vehicle; "
        + (
            "the ego vehicle is already in the target lane."
            if ego.lane_index == tlane
            else f"the ego vehicle must move {abs(tlane - ego.lane_index)} lane(s) to the "
            f"{'right' if tlane > ego.lane_index else 'left'}."
        )
    )
    nearest = sorted(w.svs, key=lambda v: np.hypot(v.x - ego.x, v.y - ego.y))[:k]
    if not nearest:
        lines.append(NO_VEHICLES)
    for i, v in enumerate(nearest, 1):
        dx = v.x - ego.x
        where = "ahead of" if dx >= 0 else "behind"
        lines.append(
            f"Vehicle {i}: lane {v.lane_index}, {_f(abs(dx))} m {where} the ego vehicle, "
            f"speed vx={_f(v.v_x)} m/s (relative {_f(v.v_x - ego.v_x)} m/s), lateral speed {_f(v.v_y)} m/s."
        )
    return PromptBundle(SYSTEM_PROMPT, "\n".join(lines))


_DECISION = re.compile(r"^\s*decision\s*:\s*([a-z_]+)\s*\.?\s*$", re.IGNORECASE)


def extract_action(response_text: str) -> ActionId:
    """The last ``Decision: <TOKEN>`` line wins; anything else is a FormatError."""
    for line in reversed(response_text.splitlines()):
        match = _DECISION.match(line.strip().strip("*`"))
        if match:
            try:
                return ActionId.from_token(match.group(1))
            except KeyError:
                raise FormatError(f"unknown action token {match.group(1)!r}") from None
    raise FormatError("no 'Decision: <TOKEN>' line in response")


# ---------------------------------------------------------------------------
# Endpoint client and cache


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "gpt-4o"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 30.0
    max_requeries: int = 3
    temperature: float = 0.0
    cache_enabled: bool = True
    cache_path: Optional[str] = None
    fallback: bool = True
    kappa: float = 0.05
    observed_vehicles: int = 6

    def __post_init__(self):
        if self.max_requeries < 0:
            raise ConfigError("max_requeries must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if not 0.0 <= self.kappa <= 0.2:
            raise ConfigError("kappa must lie in [0, 0.2]")


class ChatClient:
    """Blocking chat-completions client (``{model, messages, temperature}``)."""

    def __init__(self, cfg: LlmConfig):
        self.cfg = cfg
        self.requests = 0

    def complete(self, messages: list[dict]) -> str:
        cfg = self.cfg
        body = json.dumps({"model": cfg.model, "messages": messages, "temperature": cfg.temperature}).encode()
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        endpoint = os.environ.get("LGDRL_LLM_ENDPOINT", cfg.endpoint)
        request = urllib.request.Request(endpoint, data=body, headers=headers, method="POST")
        self.requests += 1
        try:
            with urllib.request.urlopen(request, timeout=cfg.timeout) as resp:
                payload = json.loads(resp.read().decode())
        except (urllib.error.URLError, OSError, TimeoutError, json.JSONDecodeError) as exc:
            raise EndpointError(f"chat endpoint {endpoint} failed: {exc}") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"unexpected response shape from {endpoint}") from exc


class AdviceCache:
    """Scenario-hash -> action cache, optionally persisted as JSON lines."""

    def __init__(self, path: Optional[str] = None, model: str = ""):
        self.path = Path(path) if path else None
        self.model = model
        self._lock = threading.Lock()
        self._entries: dict[str, ActionId] = {}
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("model") == model:
                    self._entries[rec["key"]] = ActionId.from_token(rec["action"])

    @staticmethod
    def key(scenario_text: str) -> str:
        return hashlib.sha256(scenario_text.encode()).hexdigest()

    def get(self, key: str) -> Optional[ActionId]:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, action: ActionId) -> ActionId:
        """Insert unless present; returns the stored action either way."""
        with self._lock:
            if key in self._entries:
                return self._entries[key]
            self._entries[key] = action
            if self.path:
                with open(self.path, "a") as fh:
                    fh.write(json.dumps({"key": key, "action": action.token, "model": self.model}) + "\n")
            return action

    def __len__(self) -> int:
        return len(self._entries)


def llm_advise(
    w: World,
    cfg: LlmConfig,
    client: Optional[ChatClient] = None,
    cache: Optional[AdviceCache] = None,
    oracle_cfg: OracleConfig = OracleConfig(),
) -> ExpertAdvice:
    start = time.perf_counter()
    client = client or ChatClient(cfg)
    prompt = build_prompt(w, cfg.observed_vehicles)
    key = AdviceCache.key(prompt.scenario_text)

    def advice(action, source):
        return ExpertAdvice(action, action_to_distribution(action, cfg.kappa), source, time.perf_counter() - start)

    if cache is not None and cfg.cache_enabled:
        hit = cache.get(key)
        if hit is not None:
            return advice(hit, AdviceSource.CACHE)

    messages = [
        {"role": "system", "content": prompt.system_text},
        {"role": "user", "content": prompt.scenario_text},
    ]
    try:
        for attempt in range(cfg.max_requeries + 1):
            text = client.complete(messages)
            try:
                action = extract_action(text)
            except FormatError:
                log.debug("malformed expert reply (attempt %d)", attempt + 1)
                messages = messages + [
                    {"role": "assistant", "content": text},
                    {"role": "user", "content": CORRECTION_PROMPT},
                ]
                continue
            if cache is not None and cfg.cache_enabled:
                action = cache.put(key, action)
            return advice(action, AdviceSource.LLM)
        failure = EndpointError(f"no well-formed decision after {cfg.max_requeries + 1} requests")
    except EndpointError as exc:
        failure = exc
    if not cfg.fallback:
        raise failure
    log.warning("falling back to rule oracle: %s", failure)
    return advice(rule_oracle(w, oracle_cfg), AdviceSource.LLM_FALLBACK)


class LlmExpert:
    def __init__(self, cfg: LlmConfig, oracle_cfg: OracleConfig = OracleConfig(), client: Optional[ChatClient] = None):
        self.cfg = cfg
        self.oracle_cfg = oracle_cfg
        self.client = client or ChatClient(cfg)
        self.cache = AdviceCache(cfg.cache_path, cfg.model) if cfg.cache_enabled else None

    def advise(self, world: World) -> ExpertAdvice:
        return llm_advise(world, self.cfg, self.client, self.cache, self.oracle_cfg)
