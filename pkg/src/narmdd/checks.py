"""Gradient checks for each trainable network piece.

Each ``check_*`` builds a scalar loss over random inputs and returns the max
relative error between autodiff and central-difference gradients over the
relevant parameters.
"""
from __future__ import annotations

import numpy as np

from .maskctc import CMLM, CMLMConfig, FIRST_OUTPUT_ID, cmlm_masked_crossentropy
from .nn import tensor as T
from .nn.gradcheck import gradcheck
from .nn.layers import AttentionBlock, GRULayer
from .nn.tensor import Tensor
from .phones import MASK_ID
from .pronunciation import (PMConfig, PMInput, PronunciationModel, pm_loss, pmg_gate,
                            pmg_modulate)

GRAD_TOL = 1e-6


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return T.tsum(out * w)


def check_gru(layer: GRULayer, rng: np.random.Generator, length: int = 4,
              max_elems: int | None = None) -> float:
    seq = Tensor(rng.normal(size=(length, layer.W_z.shape[0])))
    w = rng.normal(size=(length, layer.hidden_size))
    f = lambda: _weighted_sum(layer(seq)[0], w)
    return gradcheck(f, layer.parameters() + [seq], max_elems=max_elems)


def check_attention(block: AttentionBlock, rng: np.random.Generator, length: int = 3,
                    mem_length: int = 4, max_elems: int | None = None) -> float:
    d = block.norm_self.gain.shape[0]
    x = Tensor(rng.normal(size=(length, d)))
    mem = Tensor(rng.normal(size=(mem_length, d))) if block.has_cross else None
    w = rng.normal(size=(length, d))
    f = lambda: _weighted_sum(block(x, mem), w)
    extra = [x] + ([mem] if mem is not None else [])
    return gradcheck(f, block.parameters() + extra, max_elems=max_elems)


def check_pmg(pm: PronunciationModel, rng: np.random.Generator, length: int = 3,
              max_elems: int | None = None) -> float:
    c = pm.config
    h = Tensor(rng.normal(size=(length, c.d_h)))
    a = Tensor(rng.normal(size=c.d_a))
    w = rng.normal(size=(length, c.d_h))
    f = lambda: _weighted_sum(pmg_modulate(h, pmg_gate(h, a, pm), pm), w)
    params = pm.gate.parameters() + pm.modulate.parameters() + [h, a]
    return gradcheck(f, params, max_elems=max_elems)


def random_pm_input(vocab: int, rng: np.random.Generator, length: int = 4,
                    prompt_length: int = 5) -> tuple[PMInput, np.ndarray]:
    dictated = rng.integers(FIRST_OUTPUT_ID, vocab, size=length)
    prompt = rng.integers(FIRST_OUTPUT_ID, vocab, size=prompt_length)
    inp = PMInput(tuple(dictated), tuple(rng.uniform(size=length)), tuple(prompt))
    return inp, rng.integers(0, 2, size=length)


def check_pm(pm: PronunciationModel, rng: np.random.Generator,
             max_elems: int | None = None) -> float:
    inp, labels = random_pm_input(pm.config.vocab, rng)
    return gradcheck(lambda: pm_loss(inp, labels, pm), pm.parameters(), max_elems=max_elems)


def random_masked_sequence(vocab: int, rng: np.random.Generator, length: int = 5):
    ref = rng.integers(FIRST_OUTPUT_ID, vocab, size=length)
    tokens = ref.copy()
    n_mask = int(rng.integers(1, length + 1))
    tokens[rng.choice(length, size=n_mask, replace=False)] = MASK_ID
    return tokens, ref


def check_cmlm(cmlm: CMLM, rng: np.random.Generator, length: int = 5, mem_length: int = 6,
               max_elems: int | None = None) -> float:
    tokens, ref = random_masked_sequence(cmlm.config.vocab, rng, length)
    memory = Tensor(rng.normal(size=(mem_length, cmlm.config.d_model)))
    f = lambda: cmlm_masked_crossentropy(cmlm, tokens, memory, ref)
    return gradcheck(f, cmlm.parameters() + [memory], max_elems=max_elems)


def toy_models(seed: int = 0, vocab: int = 7, d: int = 4):
    rng = np.random.default_rng(seed)
    pm = PronunciationModel(PMConfig(vocab=vocab, d_e=3, d_h=d, d_a=3, d_f=5, heads=2,
                                     layers=1, gru_layers=2, d_ff=6), rng)
    cmlm = CMLM(CMLMConfig(vocab=vocab, d_model=d, heads=2, layers=1, d_ff=6), rng)
    return pm, cmlm


def run_all(pm: PronunciationModel, cmlm: CMLM, seed: int = 0,
            max_elems: int | None = None) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    return {
        "gru": check_gru(pm.gru[0], rng, max_elems=max_elems),
        "attention": check_attention(pm.blocks[0], rng, max_elems=max_elems),
        "cross_attention": check_attention(cmlm.blocks[0], rng, max_elems=max_elems),
        "pmg": check_pmg(pm, rng, max_elems=max_elems),
        "pm_loss": check_pm(pm, rng, max_elems=max_elems),
        "cmlm_ce": check_cmlm(cmlm, rng, max_elems=max_elems),
    }

