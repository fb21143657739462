"""Fixed-topology ReLU MLPs with hand-written backprop, Adam and checkpoints.

Everything is float64. Layer ``i`` computes ``h @ W[i] + b[i]`` with ``W[i]``
of shape ``(fan_in, fan_out)``; hidden layers use ReLU, the head is linear.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .divergence import log_softmax
from .errors import FormatError, ShapeError, StateError

HIDDEN_SIZES = (256, 128, 128, 64)

_MAGIC = b"LGDRLMLP"
_VERSION = 1


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_size(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Fan-in uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def zero_mlp(sizes: Sequence[int]) -> MlpParams:
    return MlpParams(
        [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
        [np.zeros(b) for b in sizes[1:]],
    )


# ---------------------------------------------------------------------------
# Branch recording: piecewise-linear pieces (ReLU masks, argmax picks) report
# which branch they took so the gradient checker can tell when a probe
# straddles a kink, where central differences are meaningless.

_branch_log: Optional[list] = None


def note_branch(mask: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(np.asarray(mask).tobytes())


@contextmanager
def _recording_branches():
    global _branch_log
    saved, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = saved


@dataclass
class Cache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


def forward(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != p.input_size:
        raise ShapeError(f"input has {x.shape[-1]} features, network expects {p.input_size}")
    cache = Cache(squeeze=squeeze)
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        cache.inputs.append(h)
        z = h @ w + b
        if i < last:
            cache.pre.append(z)
            note_branch(z > 0)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return (h[0] if squeeze else h), cache


def backward(p: MlpParams, cache: Optional[Cache], dout: np.ndarray) -> MlpParams:
    """Gradients of a scalar loss w.r.t. every parameter, given dloss/doutput."""
    if cache is None or not cache.inputs:
        raise StateError("backward() needs the cache of a forward pass")
    g = np.asarray(dout, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    n = len(p.weights)
    dws: list[np.ndarray] = [None] * n
    dbs: list[np.ndarray] = [None] * n
    for i in range(n - 1, -1, -1):
        dws[i] = cache.inputs[i].T @ g
        dbs[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ p.weights[i].T) * (cache.pre[i - 1] > 0)
    return MlpParams(dws, dbs)


def forward_actor(p: MlpParams, obs: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Softmax policy over the output head; returns probabilities and the cache."""
    logits, cache = forward(p, obs)
    return np.exp(log_softmax(logits)), cache


def forward_critic(p: MlpParams, obs: np.ndarray) -> tuple[np.ndarray, Cache]:
    return forward(p, obs)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, p: MlpParams, learning_rate: float = 5e-4, **kw) -> "AdamState":
        return cls(p.zeros_like(), p.zeros_like(), learning_rate=learning_rate, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.learning_rate, self.beta1, self.beta2, self.eps)


def adam_step(p: MlpParams, grads: MlpParams, st: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    if grads.sizes != p.sizes or st.m.sizes != p.sizes:
        raise ShapeError(f"shape mismatch: params {p.sizes}, grads {grads.sizes}, state {st.m.sizes}")
    st.step += 1
    c1 = 1.0 - st.beta1**st.step
    c2 = 1.0 - st.beta2**st.step
    for param, grad, m, v in zip(p.arrays(), grads.arrays(), st.m.arrays(), st.v.arrays()):
        m *= st.beta1
        m += (1.0 - st.beta1) * grad
        v *= st.beta2
        v += (1.0 - st.beta2) * grad * grad
        param -= st.learning_rate * (m / c1) / (np.sqrt(v / c2) + st.eps)
    return p, st


# ---------------------------------------------------------------------------
# Gradient checking


def finite_diff_check(
    loss_fn: Callable[[MlpParams], tuple[float, MlpParams]],
    p: MlpParams,
    h: float = 1e-5,
    n_coords: int = 200,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(p)`` returns ``(loss, grads)``; ``n_coords`` coordinates are
    sampled across all parameter arrays. Denominator is
    ``max(|analytic|, |numeric|, 1e-8)``. A coordinate whose +h and -h probes
    take different branches of a ReLU or argmax is not differentiable on that
    interval and is replaced by another draw.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    _, grads = loss_fn(p)
    arrays = p.arrays()
    garrays = grads.arrays()
    sizes = np.array([a.size for a in arrays])
    total = int(sizes.sum())
    order = rng.permutation(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    checked = 0
    for flat in order:
        if checked >= n_coords:
            break
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(int(flat - offsets[k]), arrays[k].shape)
        original = arrays[k][idx]
        try:
            with _recording_branches() as plus_branches:
                arrays[k][idx] = original + h
                plus = loss_fn(p)[0]
            with _recording_branches() as minus_branches:
                arrays[k][idx] = original - h
                minus = loss_fn(p)[0]
        finally:
            arrays[k][idx] = original
        if plus_branches != minus_branches:
            continue
        numeric = (plus - minus) / (2.0 * h)
        analytic = garrays[k][idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
        checked += 1
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout (little endian): 8-byte magic, uint32 version, uint32 layer count,
# then (fan_in, fan_out) uint32 pairs, then per layer W (row-major) and b as
# float64.


def save_params(p: MlpParams, path) -> None:
    sizes = p.sizes
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(p.weights)))
        for a, b in zip(sizes[:-1], sizes[1:]):
            fh.write(struct.pack("<II", a, b))
        for w, b in zip(p.weights, p.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path, input_size: Optional[int] = None, output_size: Optional[int] = None) -> MlpParams:
    """Read a checkpoint; size arguments, when given, must match the file."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise FormatError(f"{path}: not a network checkpoint")
    version, n_layers = struct.unpack_from("<II", data, 8)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    if len(data) < pos + 8 * n_layers:
        raise FormatError(f"{path}: truncated header")
    shapes = [struct.unpack_from("<II", data, pos + 8 * i) for i in range(n_layers)]
    pos += 8 * n_layers
    expected = sum(a * b + b for a, b in shapes) * 8
    if len(data) - pos != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(data) - pos}")
    weights, biases = [], []
    for a, b in shapes:
        w = np.frombuffer(data, dtype="<f8", count=a * b, offset=pos).reshape(a, b).astype(float)
        pos += 8 * a * b
        bias = np.frombuffer(data, dtype="<f8", count=b, offset=pos).astype(float)
        pos += 8 * b
        weights.append(w)
        biases.append(bias)
    params = MlpParams(weights, biases)
    if input_size is not None and params.input_size != input_size:
        raise FormatError(
            f"{path}: checkpoint input size {params.input_size} does not match configured {input_size}"
        )
    if output_size is not None and params.output_size != output_size:
        raise FormatError(
            f"{path}: checkpoint output size {params.output_size} does not match configured {output_size}"
        )
    return params
