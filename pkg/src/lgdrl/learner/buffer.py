"""Replay buffer with an optional protected demonstration segment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, EmptyBufferError, StateError


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    expert: np.ndarray
    next_expert: np.ndarray
    intervened: bool = False
    demo: bool = False


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    expert: np.ndarray
    next_expert: np.ndarray
    intervened: np.ndarray
    demo: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity store; demonstrations occupy the front slots and are never evicted.

    Demonstrations must be pushed before any regular transition. Regular
    transitions then cycle FIFO through the remaining ``capacity - n_demo``
    slots.
    """

    def __init__(self, capacity: int, obs_dim: int, n_actions: int):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.expert = np.zeros((capacity, n_actions))
        self.next_expert = np.zeros((capacity, n_actions))
        self.intervened = np.zeros(capacity, dtype=bool)
        self.demo = np.zeros(capacity, dtype=bool)
        self.n_demo = 0
        self._n_regular = 0
        self._cursor = 0  # next regular slot, relative to n_demo

    def __len__(self) -> int:
        return self.n_demo + self._n_regular

    def _write(self, i: int, t: Transition, demo: bool) -> None:
        if not np.isfinite(t.reward):
            raise ValueError("reward must be finite")
        self.obs[i] = t.obs
        self.next_obs[i] = t.next_obs
        self.actions[i] = int(t.action)
        self.rewards[i] = t.reward
        self.dones[i] = t.done
        self.expert[i] = t.expert
        self.next_expert[i] = t.next_expert
        self.intervened[i] = t.intervened
        self.demo[i] = demo

    def push_demo(self, t: Transition) -> None:
        if self._n_regular:
            raise StateError("demonstrations must be stored before regular transitions")
        if self.n_demo + 1 >= self.capacity:
            raise ConfigError("demonstration segment would leave no room for regular transitions")
        self._write(self.n_demo, t, True)
        self.n_demo += 1

    def push(self, t: Transition) -> None:
        ring = self.capacity - self.n_demo
        self._write(self.n_demo + self._cursor, t, False)
        self._cursor = (self._cursor + 1) % ring
        self._n_regular = min(self._n_regular + 1, ring)

    def live_indices(self) -> np.ndarray:
        return np.arange(len(self))

    def sample_batch(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform sampling with replacement over all live entries."""
        size = len(self)
        if size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        idx = rng.integers(0, size, size=n)
        return self.gather(idx)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx],
            self.dones[idx],
            self.expert[idx],
            self.next_expert[idx],
            self.intervened[idx],
            self.demo[idx],
        )
