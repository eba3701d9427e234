"""Scoring for mispronunciation detection and diagnosis.

Every canonical (prompt) position is classified twice: by the human
annotation, which says whether the phone was really mispronounced, and by
the system output, which says whether it was flagged. That gives the
TA/FR/FA/TR confusion counts; true rejections are further split into
correct (CD) and incorrect (ID) diagnoses depending on whether the system
recognised the phone that was actually produced.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, astuple, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Optional, Sequence

from .phones import FoldingMap, PhoneInventory
from .pronunciation import MISPRONOUNCED

MATCH, SUBSTITUTE, INSERT, DELETE = "match", "substitute", "insert", "delete"


@dataclass(frozen=True)
class AlignmentOp:
    kind: str
    ref_index: Optional[int] = None
    hyp_index: Optional[int] = None


def _cost_matrix(ref: Sequence[str], hyp: Sequence[str]) -> list[list[int]]:
    n, m = len(ref), len(hyp)
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        D[i][0] = i
    for j in range(1, m + 1):
        D[0][j] = j
    for i in range(1, n + 1):
        r = ref[i - 1]
        row, prev = D[i], D[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    return D


def align(ref: Sequence[str], hyp: Sequence[str]) -> list[AlignmentOp]:
    """Minimum edit-distance alignment.

    Backtrace prefers the diagonal (match/substitute), then deletion, then
    insertion, so the result is deterministic.
    """
    ref, hyp = list(ref), list(hyp)
    D = _cost_matrix(ref, hyp)
    ops = []
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i][j] == D[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            kind = MATCH if ref[i - 1] == hyp[j - 1] else SUBSTITUTE
            ops.append(AlignmentOp(kind, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and D[i][j] == D[i - 1][j] + 1:
            ops.append(AlignmentOp(DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(AlignmentOp(INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return ops


def edit_cost(ops: Iterable[AlignmentOp]) -> int:
    return sum(op.kind != MATCH for op in ops)


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(*(a + b for a, b in zip(astuple(self), astuple(other))))


def error_counts(ref: Sequence[str], hyp: Sequence[str]) -> ErrorCounts:
    kinds = [op.kind for op in align(ref, hyp)]
    return ErrorCounts(kinds.count(SUBSTITUTE), kinds.count(DELETE), kinds.count(INSERT), len(ref))


def per(ref: Sequence[str], hyp: Sequence[str]) -> float:
    if not ref:
        raise ValueError("reference must be non-empty")
    c = error_counts(ref, hyp)
    return c.errors / c.ref_length


@dataclass(frozen=True)
class ConfusionCounts:
    TA: int = 0
    FR: int = 0
    FA: int = 0
    TR: int = 0
    CD: int = 0
    ID: int = 0

    def __post_init__(self):
        if min(astuple(self)) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.CD + self.ID != self.TR:
            raise ValueError("CD + ID must equal TR")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(*(a + b for a, b in zip(astuple(self), astuple(other))))

    def scaled(self, k: int) -> "ConfusionCounts":
        return ConfusionCounts(*(k * a for a in astuple(self)))

    @property
    def total(self) -> int:
        return self.TA + self.FR + self.FA + self.TR


@dataclass
class UtteranceRecord:
    utt_id: str
    canonical: list[str]
    annotated: list[str]
    hypothesis: Optional[list[str]] = None
    judgements: Optional[list[str]] = None
    duration_seconds: Optional[float] = None
    confidences: Optional[list[float]] = None
    decode_seconds: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.canonical or not self.annotated:
            raise ValueError(f"{self.utt_id}: canonical and annotated must be non-empty")
        if self.duration_seconds is not None and not self.duration_seconds > 0:
            raise ValueError(f"{self.utt_id}: duration_seconds must be positive")

    def folded(self, fmap: FoldingMap, collapse_anti: bool = False) -> "UtteranceRecord":
        f = lambda seq: None if seq is None else fmap.fold(seq, collapse_anti)
        return UtteranceRecord(self.utt_id, f(self.canonical), f(self.annotated),
                               f(self.hypothesis), self.judgements, self.duration_seconds,
                               self.confidences, self.decode_seconds, dict(self.extra))

    def to_json(self) -> dict:
        out = {"utt_id": self.utt_id, "canonical": self.canonical, "annotated": self.annotated}
        for key in ("hypothesis", "confidences", "judgements", "duration_seconds",
                    "decode_seconds"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        out.update(self.extra)
        return out


def canonical_projection(canonical: Sequence[str], other: Sequence[str]) -> list[Optional[int]]:
    """For each canonical position, the aligned index in ``other`` or None if deleted."""
    proj: list[Optional[int]] = [None] * len(canonical)
    for op in align(canonical, other):
        if op.ref_index is not None:
            proj[op.ref_index] = op.hyp_index
    return proj


def _check_symbols(rec: UtteranceRecord, inventory: PhoneInventory) -> None:
    for name in ("canonical", "annotated", "hypothesis"):
        for s in getattr(rec, name) or ():
            if s not in inventory:
                raise ValueError(f"{rec.utt_id}: unknown phone {s!r} in {name}")


def classify(rec: UtteranceRecord, inventory: PhoneInventory | None = None,
             use_judgements: bool = False, skip_dels: bool = False) -> ConfusionCounts:
    """Confusion counts over the canonical positions of one utterance.

    A system deletion of a canonical phone is a flag; it is a correct
    diagnosis only when the annotation deletes that phone too. Hypothesis
    insertions never enter the counts. With ``skip_dels`` positions deleted
    by either side are left out.
    """
    if rec.hypothesis is None:
        raise ValueError(f"{rec.utt_id}: record has no hypothesis")
    if inventory is not None:
        _check_symbols(rec, inventory)
    if use_judgements:
        if rec.judgements is None:
            raise ValueError(f"{rec.utt_id}: judgements requested but absent")
        if len(rec.judgements) != len(rec.hypothesis):
            raise ValueError(f"{rec.utt_id}: {len(rec.judgements)} judgements for "
                             f"{len(rec.hypothesis)} hypothesis phones")
    truth = canonical_projection(rec.canonical, rec.annotated)
    system = canonical_projection(rec.canonical, rec.hypothesis)
    c = dict(TA=0, FR=0, FA=0, TR=0, CD=0, ID=0)
    for pos, canon in enumerate(rec.canonical):
        ti, si = truth[pos], system[pos]
        if skip_dels and (ti is None or si is None):
            continue
        actual = None if ti is None else rec.annotated[ti]
        said = None if si is None else rec.hypothesis[si]
        truly_wrong = actual != canon
        flagged = said != canon or (use_judgements and rec.judgements[si] == MISPRONOUNCED)
        if not truly_wrong:
            c["FR" if flagged else "TA"] += 1
        elif not flagged:
            c["FA"] += 1
        else:
            c["TR"] += 1
            c["CD" if said == actual else "ID"] += 1
    return ConfusionCounts(**c)


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den > 0 else None


def f1(pr: Optional[float], re: Optional[float]) -> Optional[float]:
    """Harmonic mean; None when undefined. Works on fractions or percents."""
    if pr is None or re is None or pr + re == 0:
        return None
    if pr < 0 or re < 0:
        raise ValueError("precision and recall must be non-negative")
    return 2 * pr * re / (pr + re)


def detection_rates(counts: ConfusionCounts) -> dict[str, Optional[float]]:
    c = counts
    cd_pr, cd_re = _ratio(c.TA, c.TA + c.FA), _ratio(c.TA, c.TA + c.FR)
    md_pr, md_re = _ratio(c.TR, c.TR + c.FR), _ratio(c.TR, c.TR + c.FA)
    return {
        "cd_precision": cd_pr, "cd_recall": cd_re, "cd_f1": f1(cd_pr, cd_re),
        "md_precision": md_pr, "md_recall": md_re, "md_f1": f1(md_pr, md_re),
        "dar": _ratio(c.CD, c.CD + c.ID),
    }


def rtf(decode_seconds_total: float, audio_seconds_total: float) -> float:
    if audio_seconds_total is None or not audio_seconds_total > 0:
        raise ValueError("total audio duration must be positive")
    return decode_seconds_total / audio_seconds_total


def percent(x: Optional[float]) -> str:
    """Percentage with two decimals, rounded half away from zero."""
    if x is None:
        return "-"
    d = Decimal(repr(x)) * 100
    q = abs(d).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return f"{'-' if d < 0 else ''}{q}"


RATE_FIELDS = ("cd_precision", "cd_recall", "cd_f1", "md_precision", "md_recall", "md_f1", "dar")


@dataclass
class MetricsReport:
    counts: ConfusionCounts
    errors: ErrorCounts
    utterances: int
    cd_precision: Optional[float] = None
    cd_recall: Optional[float] = None
    cd_f1: Optional[float] = None
    md_precision: Optional[float] = None
    md_recall: Optional[float] = None
    md_f1: Optional[float] = None
    dar: Optional[float] = None
    per: Optional[float] = None
    rtf: Optional[float] = None
    decode_seconds: Optional[float] = None
    audio_seconds: Optional[float] = None

    def to_dict(self) -> dict:
        out = {"utterances": self.utterances, "counts": asdict(self.counts),
               "errors": asdict(self.errors)}
        for k in RATE_FIELDS + ("per", "rtf", "decode_seconds", "audio_seconds"):
            out[k] = getattr(self, k)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self, timing: bool = True) -> str:
        rtf_text = "-" if self.rtf is None or not timing else f"{self.rtf:.4f}"
        lines = [
            f"{'':4}{'PER':>8}{'RTF':>10}",
            f"{'':4}{percent(self.per):>8}{rtf_text:>10}",
            "",
            f"{'':4}{'Correct Pronunciation Detection (CD)':^36}{'Mispronunciation Detection (MD)':^36}",
            f"{'':4}" + "".join(f"{h:>12}" for h in ("PR", "RE", "F1") * 2),
            f"{'':4}" + "".join(f"{percent(getattr(self, k)):>12}" for k in RATE_FIELDS[:6]),
            "",
            f"DAR {percent(self.dar)}",
            "TA={TA} FR={FR} FA={FA} TR={TR} CD={CD} ID={ID}".format(**asdict(self.counts)),
            f"S={self.errors.substitutions} D={self.errors.deletions} "
            f"I={self.errors.insertions} N={self.errors.ref_length} utterances={self.utterances}",
        ]
        return "\n".join(line.rstrip() for line in lines) + "\n"


def report(corpus: Sequence[UtteranceRecord], inventory: PhoneInventory | None = None,
           fold: FoldingMap | None = None, use_judgements: bool = False,
           skip_dels: bool = False, dar_mode: str = "phone",
           collapse_anti: bool = False) -> MetricsReport:
    """Aggregate counts over a corpus and compute every rate.

    ``dar_mode="utterance"`` averages per-utterance diagnosis accuracy over
    utterances that contain at least one true rejection instead of pooling.
    """
    if not corpus:
        raise ValueError("cannot evaluate an empty corpus")
    if dar_mode not in ("phone", "utterance"):
        raise ValueError(f"unknown DAR mode {dar_mode!r}")
    counts = ConfusionCounts()
    errors = ErrorCounts()
    per_utt_dar = []
    for rec in corpus:
        if inventory is not None:
            _check_symbols(rec, inventory)
        if fold is not None:
            rec = rec.folded(fold, collapse_anti)
        c = classify(rec, None, use_judgements, skip_dels)
        counts = counts + c
        if c.TR:
            per_utt_dar.append(c.CD / c.TR)
        errors = errors + error_counts(rec.annotated, rec.hypothesis)

    rates = detection_rates(counts)
    if dar_mode == "utterance":
        rates["dar"] = sum(per_utt_dar) / len(per_utt_dar) if per_utt_dar else None
    out = MetricsReport(counts, errors, len(corpus), **rates)
    out.per = errors.errors / errors.ref_length
    if all(r.decode_seconds is not None and r.duration_seconds for r in corpus):
        out.decode_seconds = math.fsum(r.decode_seconds for r in corpus)
        out.audio_seconds = math.fsum(r.duration_seconds for r in corpus)
        out.rtf = rtf(out.decode_seconds, out.audio_seconds)
    return out


@dataclass
class RtfMeasurement:
    per_utterance: list[tuple[str, float, float]]
    decode_seconds: float
    audio_seconds: float

    @property
    def rtf(self) -> float:
        return rtf(self.decode_seconds, self.audio_seconds)


def measure_rtf(records: Sequence[UtteranceRecord], load, decode) -> RtfMeasurement:
    """Time ``decode(load(rec), rec)`` for each record.

    Only the decode call is timed; reading or extracting features in
    ``load`` is excluded.
    """
    rows = []
    for rec in records:
        if not rec.duration_seconds:
            raise ValueError(f"{rec.utt_id}: duration_seconds is required for RTF")
        item = load(rec)
        start = time.perf_counter()
        decode(item, rec)
        rows.append((rec.utt_id, rec.duration_seconds, time.perf_counter() - start))
    return RtfMeasurement(rows, math.fsum(r[2] for r in rows), math.fsum(r[1] for r in rows))
