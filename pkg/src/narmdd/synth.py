"""Seeded synthetic L2-error corpus.

Each canonical position draws from its own random stream keyed by
(seed, utt_id, position), so utterances can be generated in any order or in
parallel and still come out identical.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evaluation import UtteranceRecord, canonical_projection
from .phones import ANTI_SUFFIX, PhoneInventory

CORRECT, SUBSTITUTION, ANTI, DELETION = "correct", "substitution", "anti", "deletion"


@dataclass(frozen=True)
class SynthSpec:
    p_sub: float = 0.0
    p_del: float = 0.0
    p_ins: float = 0.0
    p_anti: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_sub", "p_del", "p_ins", "p_anti"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.p_sub + self.p_del > 1.0:
            raise ValueError("p_sub + p_del must not exceed 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _stream(seed: int, utt_id: str, position: int) -> np.random.Generator:
    digest = hashlib.sha256(utt_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, key, position]))


def synth_utterance(inventory: PhoneInventory, utt_id: str, canonical: Sequence[str],
                    spec: SynthSpec, phone_seconds: float | None = 0.1) -> UtteranceRecord:
    phones = inventory.canonical_symbols
    annotated: list[str] = []
    labels: list[str] = []
    inserted_after: list[int] = []
    for pos, canon in enumerate(canonical):
        if canon not in phones:
            raise ValueError(f"{utt_id}: {canon!r} is not a canonical phone")
        rng = _stream(spec.seed, utt_id, pos)
        u = rng.random()
        if u < spec.p_del:
            labels.append(DELETION)
        elif u < spec.p_del + spec.p_sub:
            if rng.random() < spec.p_anti:
                annotated.append(canon + ANTI_SUFFIX)
                labels.append(ANTI)
            else:
                others = [p for p in phones if p != canon]
                annotated.append(others[int(rng.integers(len(others)))])
                labels.append(SUBSTITUTION)
        else:
            annotated.append(canon)
            labels.append(CORRECT)
        if rng.random() < spec.p_ins:
            annotated.append(phones[int(rng.integers(len(phones)))])
            inserted_after.append(pos)
    if not annotated:
        # keep records valid when every phone of a short prompt was deleted
        annotated.append(canonical[-1])
        labels[-1] = CORRECT
    duration = None if phone_seconds is None else phone_seconds * len(canonical)
    return UtteranceRecord(utt_id, list(canonical), annotated, duration_seconds=duration,
                           extra={"error_labels": labels, "inserted_after": inserted_after})


def synth_corpus(inventory: PhoneInventory, prompts, spec: SynthSpec,
                 phone_seconds: float | None = 0.1) -> list[UtteranceRecord]:
    """Build a corpus from prompts given as phone lists or (utt_id, phones) pairs."""
    if not prompts:
        raise ValueError("need at least one prompt")
    if spec.p_anti > 0 and spec.p_sub > 0 and not inventory.has_anti:
        raise ValueError("p_anti > 0 needs an inventory with anti-phones")
    out = []
    for i, prompt in enumerate(prompts):
        if isinstance(prompt, tuple) and len(prompt) == 2 and isinstance(prompt[0], str):
            utt_id, seq = prompt
        else:
            utt_id, seq = f"utt{i:05d}", prompt
        if not seq:
            raise ValueError(f"{utt_id}: empty prompt")
        out.append(synth_utterance(inventory, utt_id, list(seq), spec, phone_seconds))
    return out


def label_mismatches(rec: UtteranceRecord) -> int:
    """Positions where generated labels disagree with the alignment-based truth."""
    proj = canonical_projection(rec.canonical, rec.annotated)
    bad = 0
    for pos, (canon, label) in enumerate(zip(rec.canonical, rec.extra["error_labels"])):
        j = proj[pos]
        aligned_wrong = j is None or rec.annotated[j] != canon
        bad += aligned_wrong != (label != CORRECT)
    return bad


def random_prompts(inventory: PhoneInventory, count: int, min_len: int = 5,
                   max_len: int = 20, seed: int = 0) -> list[tuple[str, list[str]]]:
    rng = np.random.default_rng(seed)
    phones = inventory.canonical_symbols
    return [(f"utt{i:05d}", [phones[k] for k in rng.integers(len(phones),
                                                            size=int(rng.integers(min_len, max_len + 1)))])
            for i in range(count)]
