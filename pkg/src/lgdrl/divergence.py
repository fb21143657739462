"""KL / JS divergences, mixtures and entropy over discrete action distributions.

JS uses base-2 logs so it lies in [0, 1]; entropy uses natural logs.
All functions accept a single distribution or a batch (last axis = actions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class DivergenceConfig:
    """Log base for KL/JS (2 keeps JS in [0, 1]) and the probability floor for log(p)."""

    log_base: float = 2.0
    floor: float = 1e-12

    def __post_init__(self):
        if self.log_base not in (2.0, math.e):
            raise ConfigError("log_base must be 2 or e")
        if not 0.0 < self.floor <= 1e-6:
            raise ConfigError("floor must lie in (0, 1e-6]")


def _validate(p: np.ndarray, name: str = "p", tol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError(f"{name} has negative or non-finite entries")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise DomainError(f"{name} does not sum to 1")
    return p


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # x * log(y) with 0 * log(anything) = 0
    out = np.zeros(np.broadcast(x, y).shape)
    mask = np.broadcast_to(x > 0, out.shape)
    xb = np.broadcast_to(x, out.shape)
    yb = np.broadcast_to(y, out.shape)
    with np.errstate(divide="ignore"):
        out[mask] = xb[mask] * np.log(yb[mask])
    return out


def kl_divergence(p, q, base: float = 2.0):
    """KL(p || q); +inf where p puts mass on a zero of q."""
    p = _validate(p, "p")
    q = _validate(q, "q")
    terms = _xlogy(p, p) - _xlogy(p, q)
    kl = terms.sum(axis=-1) / math.log(base)
    return float(kl) if np.ndim(kl) == 0 else kl


def mixture(p, q) -> np.ndarray:
    p = _validate(p, "p")
    q = _validate(q, "q")
    return 0.5 * (p + q)


def js_divergence(p, q, base: float = 2.0):
    """Jensen-Shannon divergence; in bits by default, then symmetric and bounded by 1."""
    p = _validate(p, "p")
    q = _validate(q, "q")
    m = 0.5 * (p + q)
    half_p = (_xlogy(p, p) - _xlogy(p, m)).sum(axis=-1)
    half_q = (_xlogy(q, q) - _xlogy(q, m)).sum(axis=-1)
    js = 0.5 * (half_p + half_q) / math.log(base)
    js = np.clip(js, 0.0, math.log(2.0) / math.log(base))
    return float(js) if np.ndim(js) == 0 else js


def entropy(p):
    p = _validate(p, "p")
    h = -_xlogy(p, p).sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


# ---------------------------------------------------------------------------
# Log-space variants used inside the losses (no validation, batched).


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def js_from_logits(logits: np.ndarray, expert: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """JS(softmax(logits) || expert) per row and its gradient w.r.t. the logits.

    dJS/dpi_a reduces to 0.5 * log2(pi_a / m_a); the softmax Jacobian is then
    applied in closed form.
    """
    log_pi = log_softmax(logits)
    pi = np.exp(log_pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_e = np.log(expert)
        log_m = np.logaddexp(log_pi, log_e) - LN2
        half_e = np.where(expert > 0, expert * (log_e - log_m), 0.0).sum(axis=-1)
    half_p = (pi * (log_pi - log_m)).sum(axis=-1)
    js = 0.5 * (half_p + half_e) / LN2
    g = 0.5 * (log_pi - log_m) / LN2
    grad = pi * (g - (pi * g).sum(axis=-1, keepdims=True))
    return js, grad
