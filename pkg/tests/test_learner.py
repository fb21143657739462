import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from learner_util import random_batch, small_agent
from lgdrl.actions import ActionId
from lgdrl.divergence import js_divergence
from lgdrl.env import EnvConfig, HighwayEnv, encode_observation
from lgdrl.errors import ConfigError, EmptyBufferError, ShapeError, StateError
from lgdrl.expert import AdviceSource, ExpertAdvice, OracleExpert
from lgdrl.guardian import Guardian, GuardianConfig, InterventionMode, build_schedule
from lgdrl.learner import (
    ReplayBuffer,
    TrainerConfig,
    Transition,
    dual_update,
    evaluate,
    polyak_update,
    state_value,
    train,
)
from lgdrl.learner import losses as L
from lgdrl.nn import finite_diff_check, init_mlp
from lgdrl.sim import ScenarioConfig

FD_H = 1e-4


def transition(i, demo=False):
    e = np.full(5, 0.2)
    return Transition(np.full(3, float(i)), i % 5, float(i), np.full(3, float(i)), False, e, e, demo=demo)


# --- config ----------------------------------------------------------------------------


def test_trainer_config_defaults_and_validation():
    cfg = TrainerConfig()
    assert (cfg.gamma, cfg.epsilon, cfg.learning_rate, cfg.batch_size) == (0.9, 0.1, 5e-4, 256)
    assert (cfg.exploration_steps, cfg.max_episodes, cfg.buffer_capacity, cfg.polyak) == (1000, 500, 40000, 0.99)
    assert cfg.hidden_sizes == (256, 128, 128, 64)
    for bad in ({"gamma": 0.0}, {"epsilon": 0.0}, {"polyak": 1.5}, {"lambda_init": -1.0}, {"batch_size": 0}):
        with pytest.raises(ConfigError):
            TrainerConfig(**bad)
    with pytest.raises(ValueError):
        TrainerConfig(algorithm="ppo")


# --- replay buffer ---------------------------------------------------------------------


def test_buffer_ring_evicts_oldest():
    buf = ReplayBuffer(3, 3, 5)
    for i in range(4):
        buf.push(transition(i))
    assert len(buf) == 3
    assert sorted(buf.rewards.tolist()) == [1.0, 2.0, 3.0]


def test_buffer_demo_segment_survives():
    buf = ReplayBuffer(3, 3, 5)
    buf.push_demo(transition(100, demo=True))
    buf.push_demo(transition(101, demo=True))
    for i in range(5):
        buf.push(transition(i))
    assert len(buf) == 3
    assert buf.rewards[:2].tolist() == [100.0, 101.0] and buf.demo[:2].all()
    assert buf.rewards[2] == 4.0
    with pytest.raises(StateError):
        buf.push_demo(transition(7, demo=True))


def test_buffer_demo_cannot_fill_capacity():
    buf = ReplayBuffer(2, 3, 5)
    with pytest.raises(ConfigError):
        buf.push_demo(transition(0, demo=True))
        buf.push_demo(transition(1, demo=True))


def test_buffer_sampling():
    buf = ReplayBuffer(10, 3, 5)
    with pytest.raises(EmptyBufferError):
        buf.sample_batch(4, np.random.default_rng(0))
    for i in range(6):
        buf.push(transition(i))
    a = buf.sample_batch(50, np.random.default_rng(5))
    b = buf.sample_batch(50, np.random.default_rng(5))
    assert np.array_equal(a.rewards, b.rewards) and len(a) == 50
    assert set(a.rewards.tolist()) <= set(range(6))


# --- state values and critic ------------------------------------------------------------


def test_state_value_examples():
    uniform = np.full((1, 5), 0.2)
    assert state_value(uniform, np.zeros((1, 5)), np.array([0.4]), 0.0)[0] == 0.0
    onehot = np.eye(5)[[2]]
    q = np.array([[0.0, 0.0, 3.0, 9.0, -1.0]])
    assert state_value(onehot, q, np.array([0.0]), 0.0)[0] == 3.0
    pi = np.array([[0.1, 0.2, 0.3, 0.25, 0.15]])
    js = np.array([js_divergence(pi[0], pi[0])])
    assert state_value(pi, q, js, 2.0)[0] == state_value(pi, q, js, 0.0)[0]


def test_done_targets_equal_reward():
    rng = np.random.default_rng(0)
    agent = small_agent(rng)
    batch = random_batch(rng, 64, p_done=0.5)
    targets = agent.critic_targets(batch)
    assert np.array_equal(targets[batch.dones], batch.rewards[batch.dones])
    assert not np.array_equal(targets[~batch.dones], batch.rewards[~batch.dones])


def test_critic_loss_examples():
    loss, grad = L.critic_loss(np.zeros((1, 5)), np.array([1]), np.array([2.0]))
    assert loss == 4.0 and grad[0, 1] == -4.0 and np.count_nonzero(grad) == 1
    loss, _ = L.critic_loss(np.array([[0.0, 1.5, 0.0, 0.0, 0.0]]), np.array([1]), np.array([1.5]))
    assert loss == 0.0


def test_bellman_targets():
    t = L.bellman_targets(np.array([1.0, 1.0]), np.array([True, False]), np.array([5.0, 5.0]), 0.9)
    assert t.tolist() == [1.0, 1.0 + 0.9 * 5.0]


# --- actor ---------------------------------------------------------------------------------


def test_actor_flat_q_has_zero_gradient():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(8, 5))
    _, grad = L.actor_loss_unconstrained(logits, np.full((8, 5), 3.7))
    assert np.allclose(grad, 0.0, atol=1e-15)


def test_actor_constraint_vanishes_at_expert():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(8, 5))
    pi, _ = L.policy_from_logits(logits)
    q = rng.normal(size=(8, 5))
    base, _ = L.actor_loss_unconstrained(logits, q)
    loss, _, js = L.actor_loss(logits, q, pi, lam=5.0)
    assert np.allclose(js, 0.0, atol=1e-15)
    assert loss == pytest.approx(base, abs=1e-14)


def test_actor_loss_reduces_exactly_at_zero_lambda():
    rng = np.random.default_rng(3)
    logits, q, e = rng.normal(size=(8, 5)), rng.normal(size=(8, 5)), rng.dirichlet(np.ones(5), 8)
    a, ga = L.actor_loss_unconstrained(logits, q)
    b, gb, _ = L.actor_loss(logits, q, e, 0.0)
    assert a == b and np.array_equal(ga, gb)


# --- dual variable ------------------------------------------------------------------------


def test_dual_update_examples():
    assert dual_update(1.0, 0.1, 0.1, 5e-4) == 1.0
    assert dual_update(1.0, 0.3, 0.1, 5e-4) == pytest.approx(1.0001, abs=1e-15)
    assert dual_update(0.0, 0.05, 0.1, 5e-4) == 0.0
    assert dual_update(999.9999, 1.0, 0.1, 1.0) == 1e3


@given(st.floats(0.0, 10.0), st.floats(0.0, 1.0), st.floats(0.01, 0.99), st.floats(1e-5, 1e-1))
def test_dual_update_direction(lam, cbar, eps, lr):
    new = dual_update(lam, cbar, eps, lr)
    assert new >= 0.0
    if cbar > eps:
        assert new >= lam
    if cbar < eps:
        assert new <= lam


# --- targets -------------------------------------------------------------------------------


def test_polyak_examples(rng):
    online = init_mlp((4, 6, 5), rng)
    target = init_mlp((4, 6, 5), rng)
    same = polyak_update(target.copy(), online, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(same.arrays(), online.arrays()))
    kept = polyak_update(target.copy(), online, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(kept.arrays(), target.arrays()))
    with pytest.raises(ShapeError):
        polyak_update(target, init_mlp((4, 5), rng), 0.5)


def test_polyak_geometric_convergence(rng):
    online = init_mlp((4, 6, 5), rng)
    target = init_mlp((4, 6, 5), rng)

    def dist():
        return math.sqrt(sum(((a - b) ** 2).sum() for a, b in zip(target.arrays(), online.arrays())))

    d0 = dist()
    for k in range(1, 6):
        polyak_update(target, online, 0.99)
        assert dist() == pytest.approx(d0 * 0.99**k, rel=1e-9)


# --- gradient checks --------------------------------------------------------------------------


@pytest.mark.parametrize("algorithm", ["lgdrl", "vanilla_sac", "sac_bc", "sac_demo"])
def test_losses_pass_finite_difference_checks(algorithm):
    rng = np.random.default_rng(11)
    agent = small_agent(rng, algorithm=algorithm, lambda_init=0.7)
    batch = random_batch(rng)
    targets = agent.critic_targets(batch)
    critic_err = finite_diff_check(lambda p: agent.critic_objective(p, batch, targets), agent.critics[0], FD_H, 200, rng)
    q_min = agent.q_min(batch.obs)
    actor_err = finite_diff_check(lambda p: agent.actor_objective(p, batch, q_min)[:2], agent.actor, FD_H, 200, rng)
    assert critic_err < 1e-4 and actor_err < 1e-4


def test_margin_loss_satisfied_and_violated():
    q = np.array([[5.0, 1.0, 4.0, 0.0, 4.2]])
    loss, grad = L.margin_loss(q, np.array([0]), np.array([True]), 0.8)
    assert loss == 0.0 and np.all(grad == 0.0)
    loss, grad = L.margin_loss(q, np.array([2]), np.array([True]), 0.8)
    assert loss == pytest.approx(5.8 - 4.0)
    assert grad[0, 0] == 1.0 and grad[0, 2] == -1.0
    assert L.margin_loss(q, np.array([2]), np.array([False]), 0.8)[0] == 0.0


def test_bc_loss_normalised_by_intervened_count():
    logits = np.zeros((4, 5))
    expert = np.eye(5)[[0, 1, 2, 3]]
    loss, grad = L.bc_loss(logits, expert, np.array([True, True, False, False]), 2.0)
    assert loss == pytest.approx(2.0 * math.log(5))
    assert np.all(grad[2:] == 0.0)


def test_sac_rp_matches_vanilla_without_interventions():
    rng = np.random.default_rng(4)
    vanilla = small_agent(np.random.default_rng(9), algorithm="vanilla_sac")
    rp = small_agent(np.random.default_rng(9), algorithm="sac_rp")
    batch = random_batch(rng, p_flag=0.0)
    assert np.array_equal(vanilla.critic_targets(batch), rp.critic_targets(batch))
    sv, sr = vanilla.update(batch), rp.update(batch)
    assert sv.critic_losses == sr.critic_losses and sv.actor_loss == sr.actor_loss
    flagged = random_batch(rng, p_flag=1.0)
    assert np.allclose(vanilla.critic_targets(flagged) - rp.critic_targets(flagged), 1.0)


def test_only_lgdrl_moves_lambda():
    rng = np.random.default_rng(5)
    batch = random_batch(rng)
    for algo in ("vanilla_sac", "ac"):
        agent = small_agent(np.random.default_rng(0), algorithm=algo)
        assert agent.lam == 0.0
        agent.update(batch)
        assert agent.lam == 0.0
    agent = small_agent(np.random.default_rng(0), algorithm="lgdrl")
    stats = agent.update(batch)
    expected = dual_update(1.0, stats.constraint, 0.1, 5e-4)
    assert stats.lam == agent.lam == expected


def test_update_is_deterministic():
    rng = np.random.default_rng(6)
    batch = random_batch(rng)
    a, b = small_agent(np.random.default_rng(1)), small_agent(np.random.default_rng(1))
    for _ in range(3):
        assert a.update(batch) == b.update(batch)
    assert all(np.array_equal(x, y) for x, y in zip(a.actor.arrays(), b.actor.arrays()))


# --- training and evaluation ----------------------------------------------------------------

TINY = dict(hidden_sizes=(16, 16), batch_size=16, exploration_steps=20, max_episodes=3, demo_count=30)


def tiny_env():
    return HighwayEnv(EnvConfig(scenario=ScenarioConfig(sv_count=6), episode_seconds=3.0, action_repeat=5))


def run(algorithm="lgdrl", mode=InterventionMode.INTERMITTENT, seed=0):
    gcfg = GuardianConfig(mode=mode)
    cfg = TrainerConfig(algorithm=algorithm, **TINY)
    guardian = Guardian(gcfg, build_schedule(gcfg, cfg.max_episodes, 0))
    return train(tiny_env(), OracleExpert(), guardian, cfg, seed)


def test_training_is_deterministic():
    a, b = run(seed=3), run(seed=3)
    strip = lambda r: [(e.scenario_seed, e.ret, e.outcome, e.steps, e.intervention_count, e.lam) for e in r.episodes]
    assert strip(a) == strip(b)
    assert strip(a) != strip(run(seed=4))


def test_off_mode_never_intervenes():
    result = run(mode=InterventionMode.OFF)
    assert sum(e.intervention_count for e in result.episodes) == 0
    assert result.interventions == []


def test_continuous_mode_intervenes():
    result = run(mode=InterventionMode.CONTINUOUS)
    assert result.permitted == frozenset(range(3))
    assert all(rec.a_applied == rec.a_llm for _, rec in result.interventions)


@pytest.mark.parametrize("algorithm", ["vanilla_sac", "sac_rp", "sac_bc", "sac_demo", "ac"])
def test_baselines_train(algorithm):
    result = run(algorithm)
    assert len(result.episodes) == 3
    assert all(np.isfinite(e.ret) for e in result.episodes)


def test_sac_demo_requires_demonstrations():
    cfg = TrainerConfig(algorithm="sac_demo", **{**TINY, "demo_count": 0})
    with pytest.raises(ConfigError):
        train(tiny_env(), OracleExpert(), None, cfg, 0)


class SelfExpert:
    """Advises with the agent's own policy, so the JS gap must vanish."""

    def __init__(self, agent, k):
        self.agent, self.k = agent, k

    def advise(self, world):
        pi = self.agent.policy(encode_observation(world, self.k))
        return ExpertAdvice(ActionId(int(np.argmax(pi))), pi, AdviceSource.ORACLE)


def test_evaluation_reproducible_and_self_gap_zero():
    agent = run().agent
    env = tiny_env()
    a = evaluate(agent, env, [11, 12, 13], SelfExpert(agent, 6))
    b = evaluate(agent, env, [11, 12, 13])
    assert a.metrics() | {"js_gap_mean": None} == b.metrics() | {"js_gap_mean": None}
    assert len(a.js_gap) == sum(e.steps for e in a.episodes)
    assert all(g == 0.0 for _, _, g in a.js_gap)
    assert a.policy_latency > 0.0
