"""Dense feed-forward networks with hand-written backprop, plus Adam."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SIGMOID = "sigmoid"


def _act(kind: Activation, a: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(a, 0.0)
    if kind is Activation.SIGMOID:
        return sigmoid(a)
    return a


def _act_grad(kind: Activation, a: np.ndarray, y: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return (a > 0).astype(np.float64)
    if kind is Activation.SIGMOID:
        return y * (1.0 - y)
    return np.ones_like(a)


def sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class DenseLayer:
    W: np.ndarray  # [out, in]
    b: np.ndarray  # [out]
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.activation = Activation(self.activation)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class Mlp:
    layers: list[DenseLayer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer widths do not compose: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def init(
        cls,
        widths: Sequence[int],
        gen: np.random.Generator,
        hidden: Activation = Activation.RELU,
        output: Activation = Activation.IDENTITY,
    ) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = gen.uniform(-limit, limit, size=(fan_out, fan_in))
            act = output if i == len(widths) - 2 else hidden
            layers.append(DenseLayer(W, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in the order ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out


@dataclass
class ForwardCache:
    net_id: int
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


def forward(net: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"expected input of shape [batch, {net.in_dim}], got {x.shape}")
    cache = ForwardCache(id(net))
    h = x
    for layer in net.layers:
        cache.inputs.append(h)
        a = h @ layer.W.T + layer.b
        h = _act(layer.activation, a)
        cache.pre.append(a)
        cache.outputs.append(h)
    return h, cache


def backward(net: Mlp, cache: ForwardCache, dY) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns gradients aligned with ``net.params()`` and the input gradient."""
    if cache.net_id != id(net) or len(cache.pre) != len(net.layers):
        raise ValueError("cache does not come from a forward pass of this network")
    g = np.asarray(dY, dtype=np.float64)
    if g.shape != cache.outputs[-1].shape:
        raise ValueError(f"dY shape {g.shape} != output shape {cache.outputs[-1].shape}")
    grads: list[np.ndarray] = []
    for layer, h_in, a, y in zip(
        reversed(net.layers), reversed(cache.inputs), reversed(cache.pre), reversed(cache.outputs)
    ):
        g = g * _act_grad(layer.activation, a, y)
        grads += [g.sum(axis=0), g.T @ h_in]  # reversed below into (W, b) order
        g = g @ layer.W
    grads.reverse()
    return grads, g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr, **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
    return params


def dump_params(net: Mlp) -> bytes:
    """Header of little-endian int32 (layer count, then out/in per layer), then float64 data."""
    header = [len(net.layers)]
    for layer in net.layers:
        header += [layer.out_dim, layer.in_dim]
    chunks = [struct.pack(f"<{len(header)}i", *header)]
    for layer in net.layers:
        chunks += [layer.W.astype("<f8").tobytes(), layer.b.astype("<f8").tobytes()]
    return b"".join(chunks)


def load_params(blob: bytes) -> list[tuple[np.ndarray, np.ndarray]]:
    """Inverse of :func:`dump_params`; returns ``[(W, b), ...]``."""
    if len(blob) < 4:
        raise ValueError("snapshot too short for a header")
    (count,) = struct.unpack_from("<i", blob, 0)
    offset = 4
    if count < 0 or len(blob) < offset + 8 * count:
        raise ValueError("snapshot header is truncated")
    shapes = [struct.unpack_from("<2i", blob, offset + 8 * i) for i in range(count)]
    offset += 8 * count
    need = offset + 8 * sum(o * i + o for o, i in shapes)
    if len(blob) != need:
        raise ValueError(f"snapshot has {len(blob)} bytes, header implies {need}")
    out = []
    for n_out, n_in in shapes:
        W = np.frombuffer(blob, "<f8", n_out * n_in, offset).reshape(n_out, n_in).copy()
        offset += 8 * n_out * n_in
        b = np.frombuffer(blob, "<f8", n_out, offset).copy()
        offset += 8 * n_out
        out.append((W, b))
    return out
