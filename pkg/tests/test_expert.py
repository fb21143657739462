import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import car, world
from mock_llm import MockLlm
from lgdrl.actions import ActionId
from lgdrl.errors import ConfigError, EndpointError, FormatError
from lgdrl.expert import (
    NO_VEHICLES,
    AdviceCache,
    AdviceSource,
    LlmConfig,
    LlmExpert,
    OracleConfig,
    OracleExpert,
    action_to_distribution,
    build_prompt,
    extract_action,
    llm_advise,
    rule_oracle,
)
from lgdrl.sim import spawn_scenario

BARE = OracleConfig(guard=False)


# --- rule oracle -------------------------------------------------------------------


@pytest.mark.parametrize("cfg", [OracleConfig(), BARE])
def test_oracle_moves_toward_empty_target_side(cfg):
    assert rule_oracle(world(car(100.0, 0)), cfg) == ActionId.RIGHT_LANE_CHANGE
    assert rule_oracle(world(car(100.0, 3), target=(600.0, 0)), cfg) == ActionId.LEFT_LANE_CHANGE


@pytest.mark.parametrize("cfg", [OracleConfig(), BARE])
def test_oracle_brakes_for_close_leader(cfg):
    w = world(car(100.0, 3, v=25.0), car(108.0, 3, v=18.0), target=(600.0, 3))
    assert 8.0 / 7.0 < 2.5
    assert rule_oracle(w, cfg) == ActionId.DECELERATE


@pytest.mark.parametrize("cfg", [OracleConfig(), BARE])
def test_oracle_idles_near_speed_limit(cfg):
    assert rule_oracle(world(car(100.0, 3, v=29.5), target=(600.0, 3)), cfg) == ActionId.IDLE
    assert rule_oracle(world(car(100.0, 3, v=25.0), target=(600.0, 3)), cfg) == ActionId.ACCELERATE


def test_oracle_refuses_unsafe_lane_change():
    # fast follower in the target-side lane: rear TTC 10/8 < 2
    w = world(car(100.0, 0, v=20.0), car(90.0, 1, v=28.0))
    assert rule_oracle(w, BARE) != ActionId.RIGHT_LANE_CHANGE
    # vehicle alongside, not closing: TTC rules pass, the guard does not
    w = world(car(100.0, 0, v=20.0), car(103.0, 1, v=20.0))
    assert rule_oracle(w, BARE) == ActionId.RIGHT_LANE_CHANGE
    assert rule_oracle(w, OracleConfig()) != ActionId.RIGHT_LANE_CHANGE


def test_oracle_is_pure():
    w = spawn_scenario(4)
    assert rule_oracle(w) == rule_oracle(w.copy())
    assert w == spawn_scenario(4)


def test_oracle_expert_advice():
    adv = OracleExpert(kappa=0.05).advise(world(car(100.0, 0)))
    assert adv.source == AdviceSource.ORACLE
    assert int(np.argmax(adv.distribution)) == adv.action == ActionId.RIGHT_LANE_CHANGE
    assert adv.latency >= 0.0


# --- distributions -------------------------------------------------------------------


def test_action_to_distribution_examples():
    assert list(action_to_distribution(ActionId.IDLE, 0.0)) == [0.0, 1.0, 0.0, 0.0, 0.0]
    assert np.allclose(action_to_distribution(ActionId.IDLE, 0.05), [0.0125, 0.95, 0.0125, 0.0125, 0.0125], atol=1e-15)
    with pytest.raises(ConfigError):
        action_to_distribution(0, 0.3)


@given(st.sampled_from(list(ActionId)), st.floats(0.0, 0.2))
def test_action_to_distribution_valid(a, kappa):
    d = action_to_distribution(a, kappa)
    assert d.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(d >= 0) and int(np.argmax(d)) == a


# --- prompts and parsing -------------------------------------------------------------


def test_prompt_deterministic_and_complete():
    w = spawn_scenario(7)
    a, b = build_prompt(w, 6), build_prompt(w.copy(), 6)
    assert a == b
    assert sum(line.startswith("Vehicle ") for line in a.scenario_text.splitlines()) == 6
    assert "Ego vehicle" in a.scenario_text and "Target" in a.scenario_text and "lanes" in a.scenario_text
    for action in ActionId:
        assert action.token in a.system_text
    assert "Decision: <TOKEN>" in a.system_text or "Decision:" in a.system_text


def test_prompt_without_vehicles():
    assert NO_VEHICLES in build_prompt(world(car(10.0, 0)), 6).scenario_text


def test_prompt_rounds_to_one_decimal():
    text = build_prompt(world(car(123.456, 0, v=21.04)), 6).scenario_text
    assert "x=123.5 m" in text and "vx=21.0 m/s" in text


def test_extract_action_cases():
    assert extract_action("The right lane is free.\nDecision: RIGHT_LANE_CHANGE") == ActionId.RIGHT_LANE_CHANGE
    assert extract_action("decision: idle") == ActionId.IDLE
    assert extract_action("Decision: IDLE\nOn reflection...\nDecision: DECELERATE") == ActionId.DECELERATE
    with pytest.raises(FormatError):
        extract_action("I would turn right.")
    with pytest.raises(FormatError):
        extract_action("Decision: TURN_AROUND")


@pytest.mark.parametrize("action", list(ActionId))
def test_extract_round_trip(action):
    assert extract_action(f"Step 1: look around.\nDecision: {action.token}") == action


def test_llm_config_validation():
    with pytest.raises(ConfigError):
        LlmConfig(max_requeries=-1)
    with pytest.raises(ConfigError):
        LlmConfig(timeout=0.0)
    with pytest.raises(ConfigError):
        LlmConfig(kappa=0.5)


# --- endpoint behaviour --------------------------------------------------------------


def test_requery_after_malformed_reply():
    w = world(car(100.0, 0))
    with MockLlm(["I think right is good.", "Decision: RIGHT_LANE_CHANGE"]) as mock:
        expert = LlmExpert(LlmConfig(endpoint=mock.url))
        adv = expert.advise(w)
    assert adv.source == AdviceSource.LLM and adv.action == ActionId.RIGHT_LANE_CHANGE
    assert len(mock.bodies) == 2 and expert.client.requests == 2
    second = mock.bodies[1]
    assert second["temperature"] == 0.0 and second["model"] == "gpt-4o"
    assert [m["role"] for m in second["messages"]] == ["system", "user", "assistant", "user"]


def test_cache_hit_makes_no_request():
    w = world(car(100.0, 0))
    with MockLlm(["Decision: IDLE"]) as mock:
        expert = LlmExpert(LlmConfig(endpoint=mock.url))
        first = expert.advise(w)
        second = expert.advise(w)
    assert first.source == AdviceSource.LLM and second.source == AdviceSource.CACHE
    assert second.action == ActionId.IDLE
    assert len(mock.bodies) == 1


def test_cache_persists_to_disk(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache = AdviceCache(str(path), "m")
    cache.put("k", ActionId.ACCELERATE)
    assert AdviceCache(str(path), "m").get("k") == ActionId.ACCELERATE
    assert AdviceCache(str(path), "other").get("k") is None


def test_fallback_when_endpoint_down():
    w = world(car(100.0, 0))
    cfg = LlmConfig(endpoint="http://127.0.0.1:9/v1/chat/completions", timeout=1.0, cache_enabled=False)
    adv = llm_advise(w, cfg)
    assert adv.source == AdviceSource.LLM_FALLBACK
    assert adv.action == rule_oracle(w)


def test_fallback_after_exhausted_requeries_and_no_fallback_error():
    w = world(car(100.0, 0))
    with MockLlm(["no idea"]) as mock:
        cfg = LlmConfig(endpoint=mock.url, max_requeries=2, cache_enabled=False)
        adv = llm_advise(w, cfg)
        assert adv.source == AdviceSource.LLM_FALLBACK
        assert len(mock.bodies) == 3
        with pytest.raises(EndpointError):
            llm_advise(w, LlmConfig(endpoint=mock.url, max_requeries=0, fallback=False, cache_enabled=False))


def test_mocked_endpoint_is_deterministic():
    w = spawn_scenario(2)
    results = []
    for _ in range(2):
        with MockLlm(["hmm", "Decision: ACCELERATE"]) as mock:
            adv = llm_advise(w, LlmConfig(endpoint=mock.url, cache_enabled=False))
            results.append((adv.action, adv.source, len(mock.bodies), json_bodies(mock)))
    assert results[0] == results[1]


def json_bodies(mock):
    return [json.dumps(b, sort_keys=True) for b in mock.bodies]
