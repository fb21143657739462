"""Actor-critic agent: networks, optimisers, dual variable and the update step."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from ..actions import N_ACTIONS
from ..divergence import js_from_logits
from ..errors import ConfigError
from ..nn import (
    HIDDEN_SIZES,
    AdamState,
    MlpParams,
    adam_step,
    backward,
    forward,
    init_mlp,
)
from . import losses as L
from .buffer import Batch


class Algorithm(str, Enum):
    LGDRL = "lgdrl"
    AC = "ac"  # unconstrained double-Q actor-critic (reference for lam = 0)
    VANILLA_SAC = "vanilla_sac"
    SAC_RP = "sac_rp"
    SAC_BC = "sac_bc"
    SAC_DEMO = "sac_demo"

    @property
    def is_sac(self) -> bool:
        return self in (Algorithm.VANILLA_SAC, Algorithm.SAC_RP, Algorithm.SAC_BC, Algorithm.SAC_DEMO)


@dataclass(frozen=True)
class TrainerConfig:
    algorithm: Algorithm = Algorithm.LGDRL
    gamma: float = 0.9
    epsilon: float = 0.1
    learning_rate: float = 5e-4
    dual_learning_rate: float = 5e-4
    batch_size: int = 256
    exploration_steps: int = 1000
    max_episodes: int = 500
    polyak: float = 0.99
    lambda_init: float = 1.0
    lambda_max: float = 1e3
    entropy_coef: float = 0.2
    rp_penalty: float = 1.0
    bc_weight: float = 1.0
    margin: float = 0.8
    demo_count: int = 2000
    hidden_sizes: tuple[int, ...] = HIDDEN_SIZES
    buffer_capacity: int = 40000

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in (0, 1]")
        if not 0.0 <= self.polyak <= 1.0:
            raise ConfigError("polyak must lie in [0, 1]")
        if not 0.0 <= self.lambda_init <= self.lambda_max:
            raise ConfigError("need 0 <= lambda_init <= lambda_max")
        if self.batch_size < 1 or self.max_episodes < 1 or self.buffer_capacity < 1:
            raise ConfigError("batch_size, max_episodes and buffer_capacity must be positive")
        if self.exploration_steps < 0 or self.demo_count < 0:
            raise ConfigError("exploration_steps and demo_count must be >= 0")
        if min(self.learning_rate, self.dual_learning_rate) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.entropy_coef < 0 or self.rp_penalty < 0 or self.bc_weight < 0 or self.margin < 0:
            raise ConfigError("baseline coefficients must be >= 0")


@dataclass
class UpdateStats:
    critic_losses: tuple[float, float]
    actor_loss: float
    constraint: float  # batch-mean JS(pi || pi_e) after the actor step
    lam: float


@dataclass
class Agent:
    cfg: TrainerConfig
    actor: MlpParams
    critics: list[MlpParams]
    targets: list[MlpParams]
    actor_opt: AdamState
    critic_opts: list[AdamState]
    lam: float
    updates: int = 0
    obs_dim: int = field(init=False)

    def __post_init__(self):
        self.obs_dim = self.actor.input_size

    @classmethod
    def create(cls, obs_dim: int, cfg: TrainerConfig, rng: np.random.Generator, n_actions: int = N_ACTIONS):
        sizes = [obs_dim, *cfg.hidden_sizes, n_actions]
        actor = init_mlp(sizes, rng)
        critics = [init_mlp(sizes, rng) for _ in range(2)]
        lam = cfg.lambda_init if cfg.algorithm == Algorithm.LGDRL else 0.0
        return cls(
            cfg,
            actor,
            critics,
            [c.copy() for c in critics],
            AdamState.for_params(actor, cfg.learning_rate),
            [AdamState.for_params(c, cfg.learning_rate) for c in critics],
            lam,
        )

    # -- acting ------------------------------------------------------------

    def policy(self, obs: np.ndarray) -> np.ndarray:
        logits, _ = forward(self.actor, obs)
        return L.policy_from_logits(logits)[0]

    def act(self, obs: np.ndarray, rng: Optional[np.random.Generator] = None, greedy: bool = False) -> int:
        pi = self.policy(obs)
        if greedy or rng is None:
            return int(np.argmax(pi))
        return int(rng.choice(len(pi), p=pi))

    # -- learning ----------------------------------------------------------

    def critic_targets(self, batch: Batch) -> np.ndarray:
        cfg = self.cfg
        next_logits, _ = forward(self.actor, batch.next_obs)
        pi, log_pi = L.policy_from_logits(next_logits)
        q_min = np.minimum(forward(self.targets[0], batch.next_obs)[0], forward(self.targets[1], batch.next_obs)[0])
        rewards = batch.rewards
        if cfg.algorithm.is_sac:
            values = L.soft_state_value(pi, log_pi, q_min, cfg.entropy_coef)
            if cfg.algorithm == Algorithm.SAC_RP:
                rewards = rewards - cfg.rp_penalty * batch.intervened
        elif cfg.algorithm == Algorithm.LGDRL:
            js, _ = js_from_logits(next_logits, batch.next_expert)
            values = L.state_value(pi, q_min, js, self.lam)
        else:
            values = L.unconstrained_value(pi, q_min)
        return L.bellman_targets(rewards, batch.dones, values, cfg.gamma)

    def critic_objective(self, params: MlpParams, batch: Batch, targets: np.ndarray) -> tuple[float, MlpParams]:
        q, cache = forward(params, batch.obs)
        loss, dq = L.critic_loss(q, batch.actions, targets)
        if self.cfg.algorithm == Algorithm.SAC_DEMO:
            m_loss, m_grad = L.margin_loss(q, batch.actions, batch.demo, self.cfg.margin)
            loss += m_loss
            dq = dq + m_grad
        return loss, backward(params, cache, dq)

    def actor_objective(self, params: MlpParams, batch: Batch, q_min: np.ndarray) -> tuple[float, MlpParams, np.ndarray]:
        cfg = self.cfg
        logits, cache = forward(params, batch.obs)
        if cfg.algorithm.is_sac:
            loss, grad = L.sac_actor_loss(logits, q_min, cfg.entropy_coef)
            if cfg.algorithm == Algorithm.SAC_BC:
                b_loss, b_grad = L.bc_loss(logits, batch.expert, batch.intervened, cfg.bc_weight)
                loss += b_loss
                grad = grad + b_grad
            js, _ = js_from_logits(logits, batch.expert)
        elif cfg.algorithm == Algorithm.LGDRL:
            loss, grad, js = L.actor_loss(logits, q_min, batch.expert, self.lam)
        else:
            loss, grad = L.actor_loss_unconstrained(logits, q_min)
            js, _ = js_from_logits(logits, batch.expert)
        return loss, backward(params, cache, grad), js

    def q_min(self, obs: np.ndarray) -> np.ndarray:
        return np.minimum(forward(self.critics[0], obs)[0], forward(self.critics[1], obs)[0])

    def update(self, batch: Batch) -> UpdateStats:
        """Critics, actor, dual variable, then target networks."""
        cfg = self.cfg
        targets = self.critic_targets(batch)
        c_losses = []
        for params, opt in zip(self.critics, self.critic_opts):
            loss, grads = self.critic_objective(params, batch, targets)
            adam_step(params, grads, opt)
            c_losses.append(loss)

        a_loss, grads, _ = self.actor_objective(self.actor, batch, self.q_min(batch.obs))
        adam_step(self.actor, grads, self.actor_opt)

        js, _ = js_from_logits(forward(self.actor, batch.obs)[0], batch.expert)
        cbar = float(js.mean())
        if cfg.algorithm == Algorithm.LGDRL:
            self.lam = L.dual_update(self.lam, cbar, cfg.epsilon, cfg.dual_learning_rate, cfg.lambda_max)

        for target, params in zip(self.targets, self.critics):
            L.polyak_update(target, params, cfg.polyak)
        self.updates += 1
        return UpdateStats((c_losses[0], c_losses[1]), a_loss, cbar, self.lam)

