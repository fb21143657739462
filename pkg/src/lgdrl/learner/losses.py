"""Loss values and their gradients w.r.t. network outputs.

Every loss returns ``(value, grad)`` where ``grad`` has the shape of the
network output it differentiates (Q-values or policy logits); chaining into
parameters is left to :func:`lgdrl.nn.backward`. Expectations over actions
are exact sums over the discrete action set.
"""

from __future__ import annotations

import numpy as np

from ..divergence import js_from_logits, log_softmax
from ..errors import ShapeError
from ..nn import MlpParams, note_branch


def policy_from_logits(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    log_pi = log_softmax(logits)
    return np.exp(log_pi), log_pi


# ---------------------------------------------------------------------------
# State values and critic targets


def unconstrained_value(pi: np.ndarray, q_min: np.ndarray) -> np.ndarray:
    """E_{a~pi}[min_z Q_z(s, a)] per row."""
    return (pi * q_min).sum(axis=-1)


def state_value(pi: np.ndarray, q_min: np.ndarray, constraint: np.ndarray, lam: float) -> np.ndarray:
    """Constrained soft value: expected min-Q minus lam times the JS constraint."""
    return unconstrained_value(pi, q_min) - lam * constraint


def soft_state_value(pi: np.ndarray, log_pi: np.ndarray, q_min: np.ndarray, alpha: float) -> np.ndarray:
    return (pi * (q_min - alpha * log_pi)).sum(axis=-1)


def bellman_targets(rewards: np.ndarray, dones: np.ndarray, next_values: np.ndarray, gamma: float) -> np.ndarray:
    """r + gamma * V(s'); terminal transitions get exactly r."""
    return np.where(dones, rewards, rewards + gamma * next_values)


# ---------------------------------------------------------------------------
# Critic


def critic_loss(q: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared Bellman residual on the taken actions."""
    n = len(actions)
    rows = np.arange(n)
    diff = q[rows, actions] - targets
    grad = np.zeros_like(q)
    grad[rows, actions] = 2.0 * diff / n
    return float(np.mean(diff * diff)), grad


def margin_loss(
    q: np.ndarray, expert_actions: np.ndarray, mask: np.ndarray, margin: float
) -> tuple[float, np.ndarray]:
    """Large-margin term max_a(Q + m*[a != a_e]) - Q(a_e), averaged over masked rows."""
    grad = np.zeros_like(q)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return 0.0, grad
    ae = expert_actions[rows]
    qr = q[rows]
    bonus = np.full_like(qr, margin)
    bonus[np.arange(rows.size), ae] = 0.0
    augmented = qr + bonus
    best = augmented.argmax(axis=-1)
    note_branch(best)
    terms = augmented[np.arange(rows.size), best] - qr[np.arange(rows.size), ae]
    np.add.at(grad, (rows, best), 1.0 / rows.size)
    np.add.at(grad, (rows, ae), -1.0 / rows.size)
    return float(terms.mean()), grad


# ---------------------------------------------------------------------------
# Actor


def actor_loss_unconstrained(logits: np.ndarray, q_min: np.ndarray) -> tuple[float, np.ndarray]:
    """-mean E_pi[min Q]; critics are constants."""
    pi, _ = policy_from_logits(logits)
    n = len(logits)
    value = unconstrained_value(pi, q_min)
    grad = -pi * (q_min - value[:, None]) / n
    return float(-value.mean()), grad


def actor_loss(
    logits: np.ndarray, q_min: np.ndarray, expert: np.ndarray, lam: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """-mean[E_pi[min Q] - lam * JS(pi || pi_e)]; also returns per-row JS.

    Built as the unconstrained loss plus the penalty so that lam = 0 reproduces
    :func:`actor_loss_unconstrained` exactly.
    """
    base, grad = actor_loss_unconstrained(logits, q_min)
    js, js_grad = js_from_logits(logits, expert)
    n = len(logits)
    return base + lam * float(js.mean()), grad + lam * js_grad / n, js


def sac_actor_loss(logits: np.ndarray, q_min: np.ndarray, alpha: float) -> tuple[float, np.ndarray]:
    """Discrete SAC: mean E_pi[alpha*log pi - min Q]."""
    pi, log_pi = policy_from_logits(logits)
    n = len(logits)
    f = alpha * log_pi - q_min
    value = (pi * f).sum(axis=-1)
    grad = pi * (f - value[:, None]) / n
    return float(value.mean()), grad


def bc_loss(logits: np.ndarray, expert: np.ndarray, mask: np.ndarray, weight: float) -> tuple[float, np.ndarray]:
    """weight * cross-entropy to argmax(expert), averaged over masked rows."""
    grad = np.zeros_like(logits)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return 0.0, grad
    pi, log_pi = policy_from_logits(logits[rows])
    labels = expert[rows].argmax(axis=-1)
    idx = np.arange(rows.size)
    ce = -log_pi[idx, labels]
    g = pi.copy()
    g[idx, labels] -= 1.0
    grad[rows] = weight * g / rows.size
    return weight * float(ce.mean()), grad


# ---------------------------------------------------------------------------
# Dual variable and target networks


def dual_update(lam: float, cbar: float, epsilon: float, lr: float, lam_max: float = 1e3) -> float:
    """Projected dual descent: lam <- clip(lam - lr*(epsilon - cbar), 0, lam_max)."""
    return float(min(max(lam - lr * (epsilon - cbar), 0.0), lam_max))


def polyak_update(target: MlpParams, params: MlpParams, tau: float) -> MlpParams:
    """target <- tau*target + (1 - tau)*params, in place."""
    if target.sizes != params.sizes:
        raise ShapeError(f"target sizes {target.sizes} differ from online sizes {params.sizes}")
    for t, p in zip(target.arrays(), params.arrays()):
        t *= tau
        t += (1.0 - tau) * p
    return target
