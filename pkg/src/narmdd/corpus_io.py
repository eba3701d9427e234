"""Binary matrix/weight containers and JSON-lines corpora.

MATX: ``b"MATX"``, rows and cols as little-endian u32, then rows*cols
little-endian float32 values in row-major order.

NNWT: ``b"NNWT"``, tensor count (u32), then per tensor: name length (u16),
UTF-8 name, ndim (u8), dims (u32 each) and a float32 payload.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .evaluation import UtteranceRecord
from .maskctc import CMLM, CMLMConfig, EncoderConfig, EncoderStack
from .phones import PhoneInventory
from .pronunciation import LABELS, PMConfig, PronunciationModel

MATX_MAGIC = b"MATX"
NNWT_MAGIC = b"NNWT"


class FormatError(ValueError):
    pass


def _as_f32(values: np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError("cannot serialise non-finite values")
    return arr.astype("<f4")


def write_matrix(path: str | Path, m) -> None:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"MATX holds 2-D matrices, got shape {arr.shape}")
    payload = _as_f32(arr)
    with open(path, "wb") as fh:
        fh.write(MATX_MAGIC + struct.pack("<II", *arr.shape))
        fh.write(payload.tobytes(order="C"))


def read_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MATX_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    rows, cols = struct.unpack_from("<II", raw, 4)
    need = 12 + 4 * rows * cols
    if len(raw) != need:
        raise FormatError(f"{path}: payload has {len(raw) - 12} bytes, header implies {need - 12}")
    m = np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(m)):
        raise FormatError(f"{path}: non-finite value in payload")
    return m


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    parts = [NNWT_MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        if not encoded or len(encoded) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} cannot be stored")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(_as_f32(arr).tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != NNWT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    try:
        (count,) = struct.unpack_from("<I", raw, 4)
        off = 8
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            name = raw[off + 2: off + 2 + nlen].decode("utf-8")
            off += 2 + nlen
            (ndim,) = struct.unpack_from("<B", raw, off)
            dims = struct.unpack_from(f"<{ndim}I", raw, off + 1)
            off += 1 + 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            if off + 4 * size > len(raw):
                raise FormatError(f"{path}: truncated payload for {name!r}")
            arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
            if name in out:
                raise FormatError(f"{path}: duplicate tensor name {name!r}")
            out[name] = arr.astype(np.float64)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated file") from exc
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return out


@dataclass
class ModelBundle:
    encoder: Optional[EncoderStack] = None
    cmlm: Optional[CMLM] = None
    pm: Optional[PronunciationModel] = None

    @property
    def vocab(self) -> Optional[int]:
        for m in (self.encoder, self.cmlm, self.pm):
            if m is not None:
                return m.config.vocab
        return None


_PARTS = (("encoder", EncoderStack, EncoderConfig), ("cmlm", CMLM, CMLMConfig),
          ("pm", PronunciationModel, PMConfig))


def save_models(path: str | Path, bundle: ModelBundle) -> None:
    tensors: dict[str, np.ndarray] = {}
    for key, _, cfg_cls in _PARTS:
        model = getattr(bundle, key)
        if model is None:
            continue
        cfg = dataclasses.astuple(model.config)
        tensors[f"meta.{key}"] = np.asarray(cfg, dtype=np.float64)
        for name, value in model.state_dict().items():
            tensors[f"{key}.{name}"] = value
    write_tensors(path, tensors)


def load_models(path: str | Path) -> ModelBundle:
    tensors = read_tensors(path)
    bundle = ModelBundle()
    for key, model_cls, cfg_cls in _PARTS:
        meta = tensors.get(f"meta.{key}")
        if meta is None:
            continue
        cfg = cfg_cls(*(int(round(v)) for v in meta))
        model = model_cls(cfg, np.random.default_rng(0))
        prefix = key + "."
        model.load_state_dict({k[len(prefix):]: v for k, v in tensors.items()
                               if k.startswith(prefix)})
        setattr(bundle, key, model)
    if bundle.vocab is None:
        raise FormatError(f"{path}: no model found in weight file")
    return bundle


class CorpusError(ValueError):
    pass


_KNOWN = {"utt_id", "canonical", "annotated", "hypothesis", "judgements",
          "duration_seconds", "confidences", "decode_seconds"}


def parse_record(obj: dict, inventory: PhoneInventory | None = None) -> UtteranceRecord:
    if not isinstance(obj, dict):
        raise CorpusError("record must be a JSON object")
    for key in ("utt_id", "canonical", "annotated"):
        if key not in obj:
            raise CorpusError(f"missing field {key!r}")
    seqs = {}
    for key in ("canonical", "annotated", "hypothesis"):
        value = obj.get(key)
        if value is None:
            continue
        if isinstance(value, str):
            value = value.split()
        if not isinstance(value, list) or not all(isinstance(s, str) for s in value):
            raise CorpusError(f"{key} must be a list of phone symbols")
        if inventory is not None:
            for s in value:
                if s not in inventory:
                    raise CorpusError(f"unknown phone {s!r} in {key}")
        seqs[key] = value
    judgements = obj.get("judgements")
    if judgements is not None and any(j not in LABELS for j in judgements):
        raise CorpusError(f"judgements must be among {LABELS}")
    try:
        return UtteranceRecord(
            utt_id=str(obj["utt_id"]), canonical=seqs["canonical"],
            annotated=seqs["annotated"], hypothesis=seqs.get("hypothesis"),
            judgements=judgements, duration_seconds=obj.get("duration_seconds"),
            confidences=obj.get("confidences"), decode_seconds=obj.get("decode_seconds"),
            extra={k: v for k, v in obj.items() if k not in _KNOWN})
    except ValueError as exc:
        raise CorpusError(str(exc)) from None


def load_corpus(path: str | Path, inventory: PhoneInventory | None = None) -> list[UtteranceRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(json.loads(line), inventory))
            except (json.JSONDecodeError, CorpusError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return records


def dump_records(records: Iterable[UtteranceRecord]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in records)


def save_corpus(path: str | Path, records: Iterable[UtteranceRecord]) -> None:
    Path(path).write_text(dump_records(records), encoding="utf-8")
