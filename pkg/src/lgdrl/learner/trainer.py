"""Training loop (expert-guided interaction + updates) and greedy evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..actions import ActionId
from ..divergence import js_divergence
from ..env import Outcome
from ..errors import ConfigError
from ..expert import ExpertPolicy
from ..guardian import Guardian, InterventionRecord
from .agent import Agent, Algorithm, TrainerConfig
from .buffer import ReplayBuffer, Transition

STREAMS = ("scenario", "init", "sampler", "schedule", "demo")


@dataclass(frozen=True)
class SeedStreams:
    """Independent generators spawned from one master seed.

    ``SeedSequence(master).spawn(5)`` in the order scenario, init, sampler,
    schedule, demo. Scenario seeds for episodes are drawn from ``scenario``.
    """

    master: int
    scenario: np.random.Generator
    init: np.random.Generator
    sampler: np.random.Generator
    schedule: np.random.Generator
    demo: np.random.Generator

    @classmethod
    def from_master(cls, master: int) -> "SeedStreams":
        children = np.random.SeedSequence(master).spawn(len(STREAMS))
        return cls(master, *(np.random.default_rng(c) for c in children))

    def draw_seed(self, rng: np.random.Generator) -> int:
        return int(rng.integers(0, 2**31 - 1))


@dataclass
class EpisodeRecord:
    episode: int
    scenario_seed: int
    ret: float
    outcome: str
    steps: int
    intervention_count: int
    intervention_rate: float
    lam: float
    mean_constraint: float
    wall_seconds: float = 0.0


@dataclass
class TrainResult:
    agent: Agent
    episodes: list[EpisodeRecord]
    interventions: list[tuple[int, InterventionRecord]] = field(default_factory=list)
    permitted: frozenset[int] = frozenset()


StepHook = Callable[[int, InterventionRecord, object], None]
StartHook = Callable[[int, int, object], None]


def _record(step: int, a: int, i1: int = 0, i2: int = 0, a_llm: Optional[int] = None) -> InterventionRecord:
    a = ActionId(a)
    return InterventionRecord(step, i1, i2, a, ActionId(a if a_llm is None else a_llm), a)


def collect_demonstrations(env, expert: ExpertPolicy, count: int, rng: np.random.Generator) -> list[Transition]:
    """Roll out the expert until ``count`` transitions are gathered."""
    demos: list[Transition] = []
    while len(demos) < count:
        obs = env.reset(int(rng.integers(0, 2**31 - 1)))
        advice = expert.advise(env.snapshot())
        done = False
        while not done and len(demos) < count:
            out = env.step(advice.action)
            nxt = expert.advise(env.snapshot())
            demos.append(
                Transition(obs, int(advice.action), out.reward, out.observation, out.done,
                           advice.distribution, nxt.distribution, demo=True)
            )
            obs, advice, done = out.observation, nxt, out.done
    return demos


def train(
    env,
    expert: ExpertPolicy,
    guardian: Optional[Guardian],
    cfg: TrainerConfig,
    seed: int = 0,
    *,
    on_episode: Optional[Callable[[EpisodeRecord], None]] = None,
    on_step: Optional[StepHook] = None,
    on_episode_start: Optional[StartHook] = None,
    streams: Optional[SeedStreams] = None,
) -> TrainResult:
    """Run ``cfg.max_episodes`` training episodes; one update per env step once warm."""
    streams = streams or SeedStreams.from_master(seed)
    agent = Agent.create(env.obs_dim, cfg, streams.init, env.n_actions)
    buf = ReplayBuffer(cfg.buffer_capacity, env.obs_dim, env.n_actions)
    if cfg.algorithm == Algorithm.SAC_DEMO:
        if cfg.demo_count == 0:
            raise ConfigError("sac_demo needs demo_count > 0")
        for t in collect_demonstrations(env, expert, cfg.demo_count, streams.demo):
            buf.push_demo(t)

    result = TrainResult(agent, [], permitted=guardian.schedule if guardian else frozenset())
    total_steps = 0
    for episode in range(cfg.max_episodes):
        started = time.perf_counter()
        scenario_seed = streams.draw_seed(streams.scenario)
        obs = env.reset(scenario_seed)
        world = env.snapshot()
        if on_episode_start:
            on_episode_start(episode, scenario_seed, world)
        advice = expert.advise(world)
        ret, steps, interventions, constraints = 0.0, 0, 0, []
        done = False
        outcome = Outcome.RUNNING
        while not done:
            if total_steps < cfg.exploration_steps:
                a_drl = int(streams.sampler.integers(env.n_actions))
            else:
                a_drl = agent.act(obs, streams.sampler)
            if guardian is not None:
                rec = guardian.arbitrate(world, episode, steps, ActionId(a_drl), advice.action)
            else:
                rec = _record(steps, a_drl, a_llm=advice.action)
            out = env.step(rec.a_applied)
            world = env.snapshot()
            next_advice = expert.advise(world)
            buf.push(
                Transition(obs, int(rec.a_applied), out.reward, out.observation, out.done,
                           advice.distribution, next_advice.distribution, intervened=rec.intervened)
            )
            if rec.intervened:
                interventions += 1
                result.interventions.append((episode, rec))
            if on_step:
                on_step(episode, rec, world)
            if len(buf) >= cfg.batch_size:
                stats = agent.update(buf.sample_batch(cfg.batch_size, streams.sampler))
                constraints.append(stats.constraint)
            ret += out.reward
            steps += 1
            total_steps += 1
            obs, advice, done, outcome = out.observation, next_advice, out.done, out.outcome
        record = EpisodeRecord(
            episode,
            scenario_seed,
            ret,
            Outcome(outcome).value,
            steps,
            interventions,
            interventions / steps,
            agent.lam,
            float(np.mean(constraints)) if constraints else math.nan,
            time.perf_counter() - started,
        )
        result.episodes.append(record)
        if on_episode:
            on_episode(record)
    return result


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalResult:
    episodes: list[EpisodeRecord]
    success_rate: float
    collision_rate: float
    return_mean: float
    return_std: float
    mean_steps: float
    policy_latency: float  # mean seconds per greedy decision
    js_gap: list[tuple[int, int, float]] = field(default_factory=list)

    def metrics(self) -> dict:
        out = {
            "episodes": len(self.episodes),
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "return_mean": self.return_mean,
            "return_std": self.return_std,
            "mean_steps": self.mean_steps,
        }
        if self.js_gap:
            out["js_gap_mean"] = float(np.mean([g for _, _, g in self.js_gap]))
        return out


def evaluate(
    agent: Agent,
    env,
    seeds,
    reference_expert: Optional[ExpertPolicy] = None,
    *,
    on_step: Optional[StepHook] = None,
    on_episode_start: Optional[StartHook] = None,
) -> EvalResult:
    """Greedy rollouts on the given scenario seeds; no guardian, no expert in the loop."""
    records: list[EpisodeRecord] = []
    js_gap: list[tuple[int, int, float]] = []
    latency_total, decisions = 0.0, 0
    for episode, scenario_seed in enumerate(seeds):
        obs = env.reset(int(scenario_seed))
        if on_episode_start:
            on_episode_start(episode, int(scenario_seed), env.snapshot())
        ret, steps, done = 0.0, 0, False
        outcome = Outcome.RUNNING
        while not done:
            start = time.perf_counter()
            pi = agent.policy(obs)
            action = int(np.argmax(pi))
            latency_total += time.perf_counter() - start
            decisions += 1
            if reference_expert is not None:
                ref = reference_expert.advise(env.snapshot())
                js_gap.append((episode, steps, js_divergence(pi, ref.distribution)))
            out = env.step(action)
            if on_step:
                on_step(episode, _record(steps, action), env.snapshot())
            ret += out.reward
            steps += 1
            obs, done, outcome = out.observation, out.done, out.outcome
        records.append(
            EpisodeRecord(episode, int(scenario_seed), ret, Outcome(outcome).value, steps, 0, 0.0, agent.lam, math.nan)
        )
    returns = np.array([r.ret for r in records])
    n = len(records)
    return EvalResult(
        records,
        sum(r.outcome == Outcome.SUCCESS.value for r in records) / n,
        sum(r.outcome == Outcome.COLLISION.value for r in records) / n,
        float(returns.mean()),
        float(returns.std()),
        float(np.mean([r.steps for r in records])),
        latency_total / max(decisions, 1),
        js_gap,
    )
