"""Layers built on :mod:`narmdd.nn.tensor`.

Row-vector convention throughout: a layer maps an ``L×d_in`` matrix to
``L×d_out`` as ``X @ W + b``. Parameters are initialised uniformly in
``±1/sqrt(fan_in)`` from the generator handed to the constructor.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

LAYER_NORM_EPS = 1e-10


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


class Module:
    """Base class; parameters are the Tensor attributes, found recursively."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:3]} unexpected={unexpected[:3]}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.W = _uniform(rng, d_in, (d_in, d_out))
        self.b = _uniform(rng, d_in, (d_out,))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.W.shape[0]:
            raise ShapeError(f"linear expects {self.W.shape[0]} inputs, got {x.shape[-1]}")
        return x @ self.W + self.b


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.table = _uniform(rng, d, (n, d))

    def forward(self, ids) -> Tensor:
        return T.take_rows(self.table, ids)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Tensor(np.ones(d))
        self.bias = Tensor(np.zeros(d))

    def normalize(self, x: Tensor) -> Tensor:
        centered = x - T.mean(x, axis=-1, keepdims=True)
        var = T.mean(centered * centered, axis=-1, keepdims=True)
        return centered * (var + LAYER_NORM_EPS) ** -0.5

    def forward(self, x: Tensor) -> Tensor:
        return self.normalize(x) * self.gain + self.bias


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d, d_ff, rng)
        self.outer = Linear(d_ff, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(T.relu(self.inner(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; head h owns columns h*dk:(h+1)*dk."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ShapeError(f"model dim {d} not divisible by {heads} heads")
        self.heads = heads
        self.query = Linear(d, d, rng)
        self.key = Linear(d, d, rng)
        self.value = Linear(d, d, rng)
        self.output = Linear(d, d, rng)

    def attend(self, x: Tensor, memory: Tensor) -> tuple[Tensor, list[np.ndarray]]:
        if x.shape[-1] != memory.shape[-1]:
            raise ShapeError(f"query dim {x.shape[-1]} != memory dim {memory.shape[-1]}")
        q, k, v = self.query(x), self.key(memory), self.value(memory)
        dk = q.shape[1] // self.heads
        scale = 1.0 / math.sqrt(dk)
        outs, weights = [], []
        for h in range(self.heads):
            cols = (slice(None), slice(h * dk, (h + 1) * dk))
            w = T.softmax((q[cols] @ k[cols].T) * scale, axis=-1)
            weights.append(w.data)
            outs.append(w @ v[cols])
        return self.output(T.concat(outs, axis=1)), weights

    def forward(self, x: Tensor, memory: Tensor | None = None) -> Tensor:
        return self.attend(x, x if memory is None else memory)[0]


class AttentionBlock(Module):
    """Post-norm Transformer block, optionally with cross-attention.

    ``x -> LN(x + SelfAttn(x)) [-> LN(x + CrossAttn(x, memory))] -> LN(x + FFN(x))``
    """

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator,
                 cross: bool = False):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm_self = LayerNorm(d)
        if cross:
            self.cross_attn = MultiHeadAttention(d, heads, rng)
            self.norm_cross = LayerNorm(d)
        self.ffn = FeedForward(d, d_ff, rng)
        self.norm_ffn = LayerNorm(d)

    @property
    def has_cross(self) -> bool:
        return hasattr(self, "cross_attn")

    def forward(self, x: Tensor, memory: Tensor | None = None) -> Tensor:
        x = self.norm_self(x + self.self_attn(x))
        if self.has_cross:
            if memory is None:
                raise ShapeError("cross-attention block needs encoder memory")
            x = self.norm_cross(x + self.cross_attn(x, memory))
        return self.norm_ffn(x + self.ffn(x))


def self_attention(block: AttentionBlock, x) -> Tensor:
    return block(T.as_tensor(x))


def cross_attention(block: AttentionBlock, x, memory) -> Tensor:
    if not block.has_cross:
        raise ShapeError("block has no cross-attention sublayer")
    return block(T.as_tensor(x), T.as_tensor(memory))


class GRULayer(Module):
    """Single GRU layer.

    z = σ(x W_z + h U_z + b_z), r = σ(x W_r + h U_r + b_r),
    h~ = tanh(x W_h + (r ⊙ h) U_h + b_h), h' = (1 - z) ⊙ h + z ⊙ h~
    """

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        self.W_z = _uniform(rng, d_in, (d_in, d_h))
        self.W_r = _uniform(rng, d_in, (d_in, d_h))
        self.W_h = _uniform(rng, d_in, (d_in, d_h))
        self.U_z = _uniform(rng, d_h, (d_h, d_h))
        self.U_r = _uniform(rng, d_h, (d_h, d_h))
        self.U_h = _uniform(rng, d_h, (d_h, d_h))
        self.b_z = _uniform(rng, d_h, (d_h,))
        self.b_r = _uniform(rng, d_h, (d_h,))
        self.b_h = _uniform(rng, d_h, (d_h,))

    @property
    def hidden_size(self) -> int:
        return self.U_z.shape[0]

    def forward(self, seq: Tensor, h0: Tensor | None = None) -> tuple[Tensor, Tensor]:
        if seq.data.ndim != 2 or seq.shape[0] == 0:
            raise ShapeError("GRU needs a non-empty L×d_in sequence")
        if seq.shape[1] != self.W_z.shape[0]:
            raise ShapeError(f"GRU expects {self.W_z.shape[0]} inputs, got {seq.shape[1]}")
        d_h = self.hidden_size
        h = T.reshape(h0, (1, d_h)) if h0 is not None else Tensor(np.zeros((1, d_h)))
        if h.shape != (1, d_h):
            raise ShapeError(f"h0 must have {d_h} entries")
        xz = seq @ self.W_z + self.b_z
        xr = seq @ self.W_r + self.b_r
        xh = seq @ self.W_h + self.b_h
        states = []
        for t in range(seq.shape[0]):
            row = slice(t, t + 1)
            z = T.sigmoid(xz[row] + h @ self.U_z)
            r = T.sigmoid(xr[row] + h @ self.U_r)
            cand = T.tanh(xh[row] + (r * h) @ self.U_h)
            h = (1.0 - z) * h + z * cand
            states.append(h)
        return T.concat(states, axis=0), T.reshape(h, (d_h,))


def gru_forward(layer: GRULayer, seq, h0=None) -> tuple[Tensor, Tensor]:
    return layer(T.as_tensor(seq), None if h0 is None else T.as_tensor(h0))


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
