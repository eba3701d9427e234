"""Pronunciation model: decides, per dictated phone, whether it was
pronounced correctly.

Dictated phone embeddings are augmented with their confidence, encoded by
self-attention blocks, gated against a GRU embedding of the prompt's
canonical phones, and classified by a small feed-forward head::

    g_s  = sigmoid([h_s ; a_E] W_1 + b_1)
    h'_s = relu(h_s + (h_s ⊙ g_s) W_2 + b_2)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import tensor as T
from .nn.layers import AttentionBlock, Embedding, GRULayer, Linear, Module, sinusoidal_positions
from .nn.tensor import ShapeError, Tensor
from .phones import BLANK_ID, MASK_ID

CORRECT = "correct"
MISPRONOUNCED = "mispronounced"
LABELS = (CORRECT, MISPRONOUNCED)


@dataclass(frozen=True)
class PMConfig:
    vocab: int
    d_e: int = 64
    d_h: int = 128
    d_a: int = 128
    d_f: int = 128
    heads: int = 4
    layers: int = 2
    gru_layers: int = 1
    d_ff: int = 256


@dataclass(frozen=True)
class PMInput:
    dictated: tuple[int, ...]
    confidences: tuple[float, ...]
    prompt: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dictated", tuple(int(x) for x in self.dictated))
        object.__setattr__(self, "confidences", tuple(float(c) for c in self.confidences))
        object.__setattr__(self, "prompt", tuple(int(x) for x in self.prompt))
        if not self.dictated or not self.prompt:
            raise ValueError("dictated and prompt sequences must be non-empty")
        if len(self.dictated) != len(self.confidences):
            raise ValueError("one confidence per dictated phone is required")
        if any(x in (BLANK_ID, MASK_ID) for x in self.dictated):
            raise ValueError("dictated phones cannot be blank or mask")


@dataclass(frozen=True)
class Judgement:
    position: int
    label: str
    probability: float


class PronunciationModel(Module):
    def __init__(self, config: PMConfig, rng: np.random.Generator):
        c = config
        self.config = config
        self.embed = Embedding(c.vocab, c.d_e, rng)
        self.in_proj = Linear(c.d_e + 1, c.d_h, rng)
        self.blocks = [AttentionBlock(c.d_h, c.heads, c.d_ff, rng) for _ in range(c.layers)]
        self.gru = [GRULayer(c.d_e if i == 0 else c.d_a, c.d_a, rng) for i in range(c.gru_layers)]
        self.gate = Linear(c.d_h + c.d_a, c.d_h, rng)  # W_1, b_1
        self.modulate = Linear(c.d_h, c.d_h, rng)  # W_2, b_2
        self.ffn_hidden = Linear(c.d_h, c.d_f, rng)
        self.ffn_out = Linear(c.d_f, 2, rng)


def init_pm(vocab: int, seed: int = 0, **dims) -> PronunciationModel:
    return PronunciationModel(PMConfig(vocab=vocab, **dims), np.random.default_rng(seed))


def embed_with_confidence(dictated: Sequence[int], confidences: Sequence[float],
                          pm: PronunciationModel) -> Tensor:
    if len(dictated) != len(confidences):
        raise ValueError("one confidence per dictated phone is required")
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1, 1)
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise ValueError("confidences must lie in [0, 1]")
    return T.concat([pm.embed(dictated), Tensor(conf)], axis=1)


def encode_prompt(prompt: Sequence[int], pm: PronunciationModel) -> Tensor:
    """Utterance-level prompt embedding a_E: last GRU layer's final state."""
    if len(prompt) == 0:
        raise ValueError("prompt must be non-empty")
    x = pm.embed(prompt)
    final = None
    for layer in pm.gru:
        x, final = layer(x)
    return final


def pmg_gate(h, a_E, pm: PronunciationModel) -> Tensor:
    h = T.as_tensor(h)
    a_E = T.as_tensor(a_E)
    if h.data.ndim == 1:
        h = T.reshape(h, (1, -1))
    if h.shape[1] != pm.config.d_h or a_E.data.size != pm.config.d_a:
        raise ShapeError("gate inputs do not match d_h / d_a")
    return T.sigmoid(pm.gate(T.concat([h, T.broadcast_rows(a_E, h.shape[0])], axis=1)))


def pmg_modulate(h, g, pm: PronunciationModel) -> Tensor:
    h, g = T.as_tensor(h), T.as_tensor(g)
    if h.data.ndim == 1:
        h = T.reshape(h, (1, -1))
    if h.shape != g.shape or h.shape[1] != pm.config.d_h:
        raise ShapeError("modulation inputs do not match d_h")
    return T.relu(h + pm.modulate(h * g))


def phone_states(inp: PMInput, pm: PronunciationModel) -> Tensor:
    """h_1..h_S: encoder output over the confidence-augmented dictation."""
    x = pm.in_proj(embed_with_confidence(inp.dictated, inp.confidences, pm))
    x = x + sinusoidal_positions(x.shape[0], x.shape[1])
    for block in pm.blocks:
        x = block(x)
    return x


def pm_logits(inp: PMInput, pm: PronunciationModel, gated: bool = True) -> Tensor:
    """S×2 decision logits; ``gated=False`` replaces the gating by relu(h_s)."""
    h = phone_states(inp, pm)
    if gated:
        a_E = encode_prompt(inp.prompt, pm)
        h = pmg_modulate(h, pmg_gate(h, a_E, pm), pm)
    else:
        h = T.relu(h)
    return pm.ffn_out(T.relu(pm.ffn_hidden(h)))


def pm_probabilities(inp: PMInput, pm: PronunciationModel, gated: bool = True) -> np.ndarray:
    return T.softmax(pm_logits(inp, pm, gated), axis=-1).data


def pm_forward(inp: PMInput, pm: PronunciationModel, gated: bool = True) -> list[Judgement]:
    probs = pm_probabilities(inp, pm, gated)
    out = []
    for s, row in enumerate(probs):
        k = int(row.argmax())
        out.append(Judgement(s, LABELS[k], float(row[k])))
    return out


def pm_loss(inp: PMInput, labels: Sequence[int], pm: PronunciationModel) -> Tensor:
    """Mean cross-entropy of the decisions against 0/1 labels (1 = mispronounced)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(inp.dictated),) or np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be one 0/1 value per dictated phone")
    logp = T.log_softmax(pm_logits(inp, pm), axis=-1)
    return -T.mean(logp[(np.arange(len(labels)), labels)])
