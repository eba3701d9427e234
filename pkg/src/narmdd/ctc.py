"""CTC primitives over a frame-wise posterior grid.

Column 0 of every grid is the blank. Greedy decoding takes the per-frame
argmax (lowest id on ties), collapses repeats and drops blanks while
remembering which frames each surviving token came from.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .phones import BLANK_ID

CONFIDENCE_MODES = ("max", "mean", "product")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class PosteriorGrid:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] < 2:
            raise GridError(f"posterior grid must be T×V with T ≥ 1, V ≥ 2, got {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise GridError("posteriors must lie in [0, 1]")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-9:
            raise GridError("posterior rows must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_unnormalized(cls, m) -> "PosteriorGrid":
        """Renormalise rows, e.g. after a single-precision round trip."""
        m = np.asarray(m, dtype=np.float64)
        return cls(m / m.sum(axis=1, keepdims=True))

    @property
    def T(self) -> int:
        return self.probs.shape[0]

    @property
    def V(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class TokenSpan:
    token: int
    start_frame: int
    end_frame: int
    confidence: float = 1.0


def greedy_path(grid: PosteriorGrid) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest id on ties
    return np.argmax(grid.probs, axis=1)


def collapse(path: Sequence[int]) -> list[TokenSpan]:
    spans: list[TokenSpan] = []
    prev = None
    start = 0
    for t, tok in enumerate(list(path) + [None]):
        if tok != prev:
            if prev is not None and prev != BLANK_ID:
                spans.append(TokenSpan(int(prev), start, t - 1))
            prev, start = tok, t
    return spans


def token_confidence(grid: PosteriorGrid, spans: Sequence[TokenSpan],
                     mode: str = "max") -> list[float]:
    if mode not in CONFIDENCE_MODES:
        raise ValueError(f"unknown confidence mode {mode!r}; choose from {CONFIDENCE_MODES}")
    out = []
    for sp in spans:
        p = grid.probs[sp.start_frame:sp.end_frame + 1, sp.token]
        if mode == "max":
            c = p.max()
        elif mode == "mean":
            c = p.mean()
        else:
            c = np.prod(p)
        out.append(float(min(max(c, 0.0), 1.0)))
    return out


def greedy_decode(grid: PosteriorGrid, mode: str = "max") -> list[TokenSpan]:
    """greedy_path + collapse + token_confidence, with confidences filled in."""
    spans = collapse(greedy_path(grid))
    confs = token_confidence(grid, spans, mode)
    return [TokenSpan(s.token, s.start_frame, s.end_frame, c) for s, c in zip(spans, confs)]


def ctc_forward_logprob(grid: PosteriorGrid, labels: Sequence[int]) -> float:
    """Exact log P(labels | grid) by the CTC forward recursion.

    Returns ``-inf`` when no alignment of ``labels`` fits in ``grid.T`` frames.
    """
    labels = [int(x) for x in labels]
    if any(x == BLANK_ID for x in labels):
        raise ValueError("labels must not contain the blank")
    if any(not 0 < x < grid.V for x in labels):
        raise ValueError("label id outside grid vocabulary")
    ext = [BLANK_ID]
    for x in labels:
        ext += [x, BLANK_ID]
    S = len(ext)
    with np.errstate(divide="ignore"):
        logp = np.log(grid.probs[:, ext])
    # s may come from s-2 when ext[s] is a label differing from ext[s-2]
    skip = np.zeros(S, dtype=bool)
    for s in range(2, S):
        skip[s] = ext[s] != BLANK_ID and ext[s] != ext[s - 2]

    alpha = np.full(S, -np.inf)
    alpha[0] = logp[0, 0]
    if S > 1:
        alpha[1] = logp[0, 1]
    for t in range(1, grid.T):
        prev = alpha
        alpha = prev.copy()
        alpha[1:] = np.logaddexp(alpha[1:], prev[:-1])
        alpha[2:] = np.where(skip[2:], np.logaddexp(alpha[2:], prev[:-2]), alpha[2:])
        alpha = alpha + logp[t]
    total = alpha[-1] if S == 1 else np.logaddexp(alpha[-1], alpha[-2])
    return float(total)


def ctc_loss(grid: PosteriorGrid, labels: Sequence[int]) -> float:
    """Negative log-likelihood; ``inf`` for infeasible label sequences."""
    return -ctc_forward_logprob(grid, labels)
