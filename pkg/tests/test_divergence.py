import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lgdrl.divergence import (
    DivergenceConfig,
    entropy,
    js_divergence,
    js_from_logits,
    kl_divergence,
    log_softmax,
    mixture,
)
from lgdrl.errors import ConfigError, DomainError

ONE_HOT0 = [1.0, 0.0, 0.0, 0.0, 0.0]
ONE_HOT1 = [0.0, 1.0, 0.0, 0.0, 0.0]
UNIFORM = [0.2] * 5


def scripted_js(p, q):
    """Term-by-term JS in bits, written independently of the library."""
    total = 0.0
    for pi, qi in zip(p, q):
        mi = (pi + qi) / 2
        if pi > 0:
            total += 0.5 * pi * math.log2(pi / mi)
        if qi > 0:
            total += 0.5 * qi * math.log2(qi / mi)
    return total


distributions = arrays(np.float64, 5, elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 1e-3).map(
    lambda a: a / a.sum()
)


def test_config_defaults_and_validation():
    assert DivergenceConfig().log_base == 2.0
    with pytest.raises(ConfigError):
        DivergenceConfig(log_base=10.0)
    with pytest.raises(ConfigError):
        DivergenceConfig(floor=1e-3)


def test_kl_examples():
    assert kl_divergence(UNIFORM, UNIFORM) == 0.0
    assert kl_divergence(ONE_HOT0, UNIFORM) == pytest.approx(math.log2(5), abs=1e-12)
    assert kl_divergence(ONE_HOT0, UNIFORM, base=math.e) == pytest.approx(math.log(5), abs=1e-12)
    assert kl_divergence(UNIFORM, ONE_HOT0) == math.inf


def test_rejects_non_distributions():
    with pytest.raises(DomainError):
        kl_divergence([0.5, 0.4, 0.0, 0.0, 0.0], UNIFORM)
    with pytest.raises(DomainError):
        js_divergence([1.2, -0.2, 0.0, 0.0, 0.0], UNIFORM)
    with pytest.raises(DomainError):
        entropy([0.5, 0.5, 0.5, 0.0, 0.0])


def test_mixture_examples():
    assert list(mixture(ONE_HOT0, ONE_HOT1)) == [0.5, 0.5, 0.0, 0.0, 0.0]
    assert list(mixture(UNIFORM, UNIFORM)) == UNIFORM


def test_js_examples():
    assert js_divergence(UNIFORM, UNIFORM) == 0.0
    assert js_divergence(ONE_HOT0, ONE_HOT1) == 1.0
    p = [0.5, 0.5, 0.0, 0.0, 0.0]
    assert scripted_js(p, ONE_HOT0) == pytest.approx(0.3113, abs=1e-4)
    assert js_divergence(p, ONE_HOT0) == pytest.approx(scripted_js(p, ONE_HOT0), abs=1e-12)


def test_entropy_examples():
    assert entropy(ONE_HOT0) == 0.0
    assert entropy(UNIFORM) == pytest.approx(math.log(5), abs=1e-12)


def test_batched_inputs():
    p = np.array([UNIFORM, ONE_HOT0])
    q = np.array([ONE_HOT0, ONE_HOT0])
    assert js_divergence(p, q).shape == (2,)
    assert js_divergence(p, q)[1] == 0.0


@given(distributions, distributions)
def test_js_properties(p, q):
    a, b = js_divergence(p, q), js_divergence(q, p)
    assert a == b
    assert 0.0 <= a <= 1.0
    assert a == pytest.approx(scripted_js(p, q), abs=1e-9)
    assert js_divergence(p, p) == 0.0
    if a == 0.0:
        assert np.allclose(p, q, atol=1e-6)


@given(distributions, distributions)
def test_mixture_and_entropy_properties(p, q):
    assert mixture(p, q).sum() == pytest.approx(1.0, abs=1e-12)
    assert kl_divergence(p, p) == 0.0
    assert entropy(p) <= math.log(5) + 1e-12


@given(distributions)
def test_js_zero_only_at_equality(p):
    q = np.roll(p, 1)
    if not np.allclose(p, q, atol=1e-9):
        assert js_divergence(p, q) > 0.0


def test_js_from_logits_value_and_gradient():
    rng = np.random.default_rng(3)
    for _ in range(20):
        logits = rng.normal(size=5) * 2
        expert = rng.dirichlet(np.ones(5))
        if rng.random() < 0.3:
            expert = np.eye(5)[rng.integers(5)] * 0.95 + 0.01
        js, grad = js_from_logits(logits, expert)
        pi = np.exp(log_softmax(logits))
        assert js == pytest.approx(js_divergence(pi, expert), abs=1e-12)
        h = 1e-6
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            numeric = (js_from_logits(logits + e, expert)[0] - js_from_logits(logits - e, expert)[0]) / (2 * h)
            err = abs(numeric - grad[i]) / max(abs(numeric), abs(grad[i]), 1e-8)
            assert err < 1e-6


def test_js_from_logits_with_zero_expert_mass():
    js, grad = js_from_logits(np.zeros(5), np.array(ONE_HOT0))
    assert np.isfinite(js) and np.all(np.isfinite(grad))
    assert js == pytest.approx(js_divergence(UNIFORM, ONE_HOT0), abs=1e-12)
