"""A small enumerable MDP with an exact policy-iteration solution.

Used to check that the learner converges to the true optimum when guided by
the optimal expert. Each step ends the episode with probability ``p_end``, so
the effective discount in the Bellman equation is ``gamma * (1 - p_end)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .actions import ActionId
from .env import Outcome, RewardBreakdown, StepOutcome
from .errors import StateError
from .expert import AdviceSource, ExpertAdvice, action_to_distribution


@dataclass(frozen=True)
class ToyMdp:
    next_state: np.ndarray  # (S, A) deterministic successor
    rewards: np.ndarray  # (S, A)
    p_end: float = 0.1

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    @classmethod
    def random(cls, seed: int, n_states: int = 8, n_actions: int = 5, p_end: float = 0.1) -> "ToyMdp":
        rng = np.random.default_rng(seed)
        return cls(rng.integers(0, n_states, size=(n_states, n_actions)), rng.uniform(0, 1, size=(n_states, n_actions)), p_end)


def q_values(mdp: ToyMdp, policy: np.ndarray, gamma: float) -> np.ndarray:
    """Exact Q of a deterministic policy via a linear solve."""
    g = gamma * (1.0 - mdp.p_end)
    s = np.arange(mdp.n_states)
    transition = np.zeros((mdp.n_states, mdp.n_states))
    transition[s, mdp.next_state[s, policy]] = 1.0
    v = np.linalg.solve(np.eye(mdp.n_states) - g * transition, mdp.rewards[s, policy])
    return mdp.rewards + g * v[mdp.next_state]


def policy_iteration(mdp: ToyMdp, gamma: float, max_iter: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal deterministic policy and its Q-table."""
    policy = np.zeros(mdp.n_states, dtype=int)
    for _ in range(max_iter):
        q = q_values(mdp, policy, gamma)
        improved = q.argmax(axis=1)
        if np.array_equal(improved, policy):
            return policy, q
        policy = improved
    raise RuntimeError("policy iteration did not converge")


@dataclass
class ToyWorld:
    state: int
    steps: int = 0


class ToyEnv:
    """Episode interface matching :class:`lgdrl.env.HighwayEnv` for the trainer."""

    def __init__(self, mdp: ToyMdp, max_steps: int = 100):
        self.mdp = mdp
        self.max_steps = max_steps
        self.world: Optional[ToyWorld] = None
        self._rng: Optional[np.random.Generator] = None
        self._done = True

    @property
    def obs_dim(self) -> int:
        return self.mdp.n_states

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    def encode(self, state: int) -> np.ndarray:
        obs = np.zeros(self.mdp.n_states)
        obs[state] = 1.0
        return obs

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self.world = ToyWorld(int(self._rng.integers(self.mdp.n_states)))
        self._done = False
        return self.encode(self.world.state)

    def snapshot(self) -> ToyWorld:
        if self.world is None:
            raise StateError("reset() must be called first")
        return self.world

    def step(self, action) -> StepOutcome:
        if self.world is None or self._done:
            raise StateError("step() called on a terminated or unstarted episode")
        w = self.world
        a = int(action)
        reward = float(self.mdp.rewards[w.state, a])
        w.state = int(self.mdp.next_state[w.state, a])
        w.steps += 1
        ended = self._rng.random() < self.mdp.p_end
        truncated = w.steps >= self.max_steps
        self._done = ended or truncated
        outcome = Outcome.SUCCESS if ended else (Outcome.TIMEOUT if truncated else Outcome.RUNNING)
        return StepOutcome(
            self.encode(w.state), reward, RewardBreakdown(reward, 0.0, 0.0, 0.0), self._done, outcome, {"world": w}
        )


class TableExpert:
    """Expert that looks up a fixed action per state (action ids reuse :class:`ActionId`)."""

    def __init__(self, policy: np.ndarray, n_actions: int, kappa: float = 0.05):
        self.policy = np.asarray(policy, dtype=int)
        self.n_actions = n_actions
        self.kappa = kappa

    def advise(self, world: ToyWorld) -> ExpertAdvice:
        a = int(self.policy[world.state])
        return ExpertAdvice(ActionId(a), action_to_distribution(a, self.kappa, self.n_actions), AdviceSource.ORACLE)
