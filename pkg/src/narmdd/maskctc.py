"""Mask-CTC dictation: CTC initialisation, confidence masking and
easy-first mask-predict refinement with a conditional masked LM.

The output length is fixed by the CTC collapse; refinement only replaces
masked tokens and never revisits a committed position.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ctc
from .ctc import PosteriorGrid
from .nn import tensor as T
from .nn.functional import as_matrix, softmax_rows
from .nn.layers import AttentionBlock, Embedding, Linear, Module, sinusoidal_positions
from .nn.tensor import ShapeError, Tensor
from .phones import BLANK_ID, MASK_ID

# first id the CMLM can emit; blank (0) and mask (1) are never produced
FIRST_OUTPUT_ID = 2


@dataclass(frozen=True)
class EncoderConfig:
    vocab: int
    d_feat: int = 80
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    d_ff: int = 128


@dataclass(frozen=True)
class CMLMConfig:
    vocab: int
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    d_ff: int = 128


@dataclass(frozen=True)
class MaskCtcConfig:
    p_thr: float = 0.5
    iters: int = 10
    confidence_mode: str = "max"

    def __post_init__(self):
        if not 0.0 <= self.p_thr <= 1.0:
            raise ValueError(f"p_thr must be in [0, 1], got {self.p_thr}")
        if self.iters < 1:
            raise ValueError(f"iteration count must be ≥ 1, got {self.iters}")
        if self.confidence_mode not in ctc.CONFIDENCE_MODES:
            raise ValueError(f"unknown confidence mode {self.confidence_mode!r}")


class EncoderStack(Module):
    """Input projection, positional encoding, self-attention blocks, CTC head."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.proj = Linear(config.d_feat, config.d_model, rng)
        self.blocks = [AttentionBlock(config.d_model, config.heads, config.d_ff, rng)
                       for _ in range(config.layers)]
        self.head = Linear(config.d_model, config.vocab, rng)

    def forward(self, features: Tensor) -> tuple[Tensor, Tensor]:
        x = self.proj(features)
        x = x + sinusoidal_positions(x.shape[0], x.shape[1])
        for block in self.blocks:
            x = block(x)
        return x, self.head(x)


class CMLM(Module):
    """Conditional masked LM over {mask, canonical, anti} tokens.

    Input token id ``i`` uses embedding row ``i - 1`` (no blank row); output
    column ``j`` scores token id ``j + 2`` (no blank, no mask).
    """

    def __init__(self, config: CMLMConfig, rng: np.random.Generator):
        if config.vocab <= FIRST_OUTPUT_ID:
            raise ValueError("CMLM vocabulary needs at least one non-special token")
        self.config = config
        self.embed = Embedding(config.vocab - 1, config.d_model, rng)
        self.blocks = [AttentionBlock(config.d_model, config.heads, config.d_ff, rng, cross=True)
                       for _ in range(config.layers)]
        self.out = Linear(config.d_model, config.vocab - FIRST_OUTPUT_ID, rng)

    @property
    def output_size(self) -> int:
        return self.config.vocab - FIRST_OUTPUT_ID

    def logits(self, tokens: Sequence[int], memory) -> Tensor:
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ShapeError("CMLM input must be a non-empty token sequence")
        if np.any(ids == BLANK_ID) or np.any(ids < 0) or np.any(ids >= self.config.vocab):
            raise ValueError("CMLM input contains blank or out-of-range ids")
        memory = T.as_tensor(memory)
        if memory.data.ndim != 2 or memory.shape[1] != self.config.d_model:
            raise ShapeError(f"memory must be T×{self.config.d_model}, got {memory.shape}")
        x = self.embed(ids - 1)
        x = x + sinusoidal_positions(len(ids), self.config.d_model)
        for block in self.blocks:
            x = block(x, memory)
        return self.out(x)

    def predict(self, tokens: Sequence[int], memory) -> np.ndarray:
        """Row-normalised output probabilities, L×(vocab-2)."""
        return softmax_rows(self.logits(tokens, memory).data)


@dataclass
class TraceStep:
    masked: list[int]
    filled: list[int]


@dataclass
class RefineResult:
    tokens: list[int]
    fill_probs: dict[int, float]
    trace: list[TraceStep]
    passes: int


@dataclass
class DictationResult:
    tokens: list[int]
    confidences: list[float]
    trace: list[TraceStep] = field(default_factory=list)
    decode_seconds: float = 0.0
    ctc_tokens: list[int] = field(default_factory=list)
    ctc_confidences: list[float] = field(default_factory=list)
    cmlm_passes: int = 0


def encode(features, enc: EncoderStack) -> tuple[np.ndarray, PosteriorGrid]:
    feats = as_matrix(features)
    if feats.shape[1] != enc.config.d_feat:
        raise ShapeError(f"encoder expects {enc.config.d_feat}-dim features, got {feats.shape[1]}")
    memory, logits = enc(Tensor(feats))
    z = logits.data.copy()
    # the CTC head never emits the mask token
    z[:, MASK_ID] = -np.inf
    return memory.data, PosteriorGrid(_softmax_finite_columns(z))


def _softmax_finite_columns(z: np.ndarray) -> np.ndarray:
    finite = np.isfinite(z)
    out = np.zeros_like(z)
    out[:, finite[0]] = softmax_rows(z[:, finite[0]])
    return out


def initial_mask(tokens: Sequence[int], confidences: Sequence[float],
                 p_thr: float) -> tuple[list[int], list[int]]:
    """Replace tokens whose confidence is below ``p_thr`` by the mask id."""
    if len(tokens) != len(confidences):
        raise ValueError("tokens and confidences differ in length")
    masked = [i for i, (tok, c) in enumerate(zip(tokens, confidences))
              if c < p_thr or tok == MASK_ID]
    out = list(tokens)
    for i in masked:
        out[i] = MASK_ID
    return out, masked


def commit_schedule(n_masked: int, iters: int) -> list[int]:
    """Per-iteration commit counts: ⌈M/K⌉ each, the remainder last."""
    step = math.ceil(n_masked / iters) if n_masked else 0
    counts = []
    left = n_masked
    while left > 0:
        counts.append(min(step, left))
        left -= counts[-1]
    return counts


def mask_predict_refine(tokens: Sequence[int], memory, cmlm: CMLM, iters: int) -> RefineResult:
    if iters < 1:
        raise ValueError("iteration count must be ≥ 1")
    seq = list(tokens)
    still = [i for i, t in enumerate(seq) if t == MASK_ID]
    fill: dict[int, float] = {}
    trace: list[TraceStep] = []
    passes = 0
    for n_commit in commit_schedule(len(still), iters):
        probs = cmlm.predict(seq, memory)
        passes += 1
        best = probs[still].argmax(axis=1)
        best_p = probs[still, best]
        # stable sort keeps leftmost first among equal probabilities
        order = np.argsort(-best_p, kind="stable")[:n_commit]
        chosen = sorted(int(o) for o in order)
        filled = []
        for o in chosen:
            pos = still[o]
            seq[pos] = int(best[o]) + FIRST_OUTPUT_ID
            fill[pos] = float(best_p[o])
            filled.append(pos)
        trace.append(TraceStep(masked=list(still), filled=filled))
        still = [p for p in still if p not in fill]
    return RefineResult(seq, fill, trace, passes)


def _dictate_grid(grid: PosteriorGrid, memory, cmlm: CMLM | None,
                  config: MaskCtcConfig) -> DictationResult:
    spans = ctc.greedy_decode(grid, config.confidence_mode)
    ctc_tokens = [s.token for s in spans]
    ctc_conf = [s.confidence for s in spans]
    masked_seq, masked = initial_mask(ctc_tokens, ctc_conf, config.p_thr)
    if not masked:
        return DictationResult(ctc_tokens, list(ctc_conf), [], 0.0, ctc_tokens, ctc_conf, 0)
    if cmlm is None or memory is None:
        raise ValueError("masked tokens need a CMLM and encoder memory to refine")
    refined = mask_predict_refine(masked_seq, memory, cmlm, config.iters)
    confs = [refined.fill_probs.get(i, c) for i, c in enumerate(ctc_conf)]
    return DictationResult(refined.tokens, confs, refined.trace, 0.0, ctc_tokens, ctc_conf,
                           refined.passes)


def dictate(features, enc: EncoderStack, cmlm: CMLM,
            config: MaskCtcConfig = MaskCtcConfig()) -> DictationResult:
    """Decode precomputed features; ``decode_seconds`` covers encoder and refinement."""
    start = time.perf_counter()
    memory, grid = encode(features, enc)
    result = _dictate_grid(grid, memory, cmlm, config)
    result.decode_seconds = time.perf_counter() - start
    return result


def dictate_from_posteriors(grid: PosteriorGrid, memory, cmlm: CMLM | None,
                            config: MaskCtcConfig = MaskCtcConfig()) -> DictationResult:
    """Same as :func:`dictate` but starting from a stored grid and memory."""
    start = time.perf_counter()
    result = _dictate_grid(grid, memory, cmlm, config)
    result.decode_seconds = time.perf_counter() - start
    return result


def sequential_decode(length: int, memory, cmlm: CMLM) -> tuple[list[int], float]:
    """Token-by-token baseline: one CMLM pass per output position, left to right.

    Returns the tokens and the wall-clock seconds spent.
    """
    start = time.perf_counter()
    seq = [MASK_ID] * length
    for pos in range(length):
        probs = cmlm.predict(seq, memory)
        seq[pos] = int(probs[pos].argmax()) + FIRST_OUTPUT_ID
    return seq, time.perf_counter() - start


def cmlm_masked_crossentropy(cmlm: CMLM, tokens: Sequence[int], memory,
                             reference: Sequence[int]) -> Tensor:
    """Mean negative log-probability of ``reference`` at the masked positions."""
    if len(tokens) != len(reference):
        raise ValueError("reference must align one-to-one with the input sequence")
    masked = [i for i, t in enumerate(tokens) if t == MASK_ID]
    if not masked:
        raise ValueError("cross-entropy needs at least one masked position")
    targets = np.asarray([reference[i] for i in masked]) - FIRST_OUTPUT_ID
    if np.any(targets < 0) or np.any(targets >= cmlm.output_size):
        raise ValueError("reference tokens must be canonical or anti-phone ids")
    logp = T.log_softmax(cmlm.logits(tokens, memory), axis=-1)
    picked = logp[(np.asarray(masked), targets)]
    return -T.mean(picked)


def joint_objective(ctc_nll: float, cmlm_ce: float, ctc_weight: float = 0.3) -> float:
    """Weighted sum ``w * CTC + (1 - w) * CMLM`` used to train Mask-CTC."""
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValueError("ctc_weight must be in [0, 1]")
    return ctc_weight * ctc_nll + (1.0 - ctc_weight) * cmlm_ce


def init_models(vocab: int, seed: int = 0, encoder: dict | None = None,
                cmlm: dict | None = None) -> tuple[EncoderStack, CMLM]:
    rng = np.random.default_rng(seed)
    enc = EncoderStack(EncoderConfig(vocab=vocab, **(encoder or {})), rng)
    dec = CMLM(CMLMConfig(vocab=vocab, **(cmlm or {})), rng)
    if enc.config.d_model != dec.config.d_model:
        raise ShapeError("encoder and CMLM must share d_model")
    return enc, dec
