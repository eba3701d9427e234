"""Phone inventories, anti-phone pairing and inventory folding.

An inventory is an ordered list of phones where the position of a phone is
its id. Id 0 is always the CTC blank and id 1 the mask token used by the
masked language model; the remaining entries are canonical phones and,
optionally, one anti-phone per canonical phone. An anti-phone marks a
distorted realization of its base phone and is written ``base*``.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

BLANK_ID = 0
MASK_ID = 1
ANTI_SUFFIX = "*"
# single label used when anti-phones are collapsed at test time
COLLAPSED_ANTI = "<anti>"

KINDS = ("blank", "mask", "canonical", "anti")


class InventoryError(ValueError):
    """Raised for malformed inventory or folding data."""


@dataclass(frozen=True)
class Phone:
    id: int
    symbol: str
    kind: str


class PhoneInventory:
    """Immutable ordered phone set with symbol/id codecs."""

    def __init__(self, phones: Sequence[Phone]):
        phones = tuple(phones)
        index: dict[str, int] = {}
        for pos, ph in enumerate(phones):
            if ph.id != pos:
                raise InventoryError(f"phone {ph.symbol!r} has id {ph.id}, expected {pos}")
            if not ph.symbol:
                raise InventoryError(f"empty symbol at id {pos}")
            if ph.kind not in KINDS:
                raise InventoryError(f"unknown kind {ph.kind!r} for {ph.symbol!r}")
            if ph.symbol in index:
                raise InventoryError(f"duplicate symbol {ph.symbol!r}")
            index[ph.symbol] = pos

        kinds = [ph.kind for ph in phones]
        if kinds.count("blank") != 1 or not phones or phones[BLANK_ID].kind != "blank":
            raise InventoryError("inventory needs exactly one blank, at id 0")
        if kinds.count("mask") != 1 or len(phones) < 2 or phones[MASK_ID].kind != "mask":
            raise InventoryError("inventory needs exactly one mask, at id 1")

        anti_pairing: dict[int, int] = {}
        for ph in phones:
            if ph.kind != "anti":
                continue
            base = ph.symbol[: -len(ANTI_SUFFIX)] if ph.symbol.endswith(ANTI_SUFFIX) else None
            if not base or base not in index or phones[index[base]].kind != "canonical":
                raise InventoryError(f"anti-phone {ph.symbol!r} has no canonical base")
            anti_pairing[index[base]] = ph.id
        canonical = [ph.id for ph in phones if ph.kind == "canonical"]
        if anti_pairing and len(anti_pairing) != len(canonical):
            missing = [phones[c].symbol for c in canonical if c not in anti_pairing]
            raise InventoryError(f"anti pairing incomplete, no anti-phone for {missing[:5]}")

        self.phones = phones
        self._index = index
        self._anti = anti_pairing
        self._base = {a: c for c, a in anti_pairing.items()}
        self.canonical_ids = tuple(canonical)
        self.anti_ids = tuple(anti_pairing[c] for c in canonical) if anti_pairing else ()

    @classmethod
    def from_symbols(cls, canonical: Iterable[str], with_anti: bool = True,
                     blank: str = "<blank>", mask: str = "<mask>") -> "PhoneInventory":
        canonical = list(canonical)
        entries = [(blank, "blank"), (mask, "mask")]
        entries += [(s, "canonical") for s in canonical]
        if with_anti:
            entries += [(s + ANTI_SUFFIX, "anti") for s in canonical]
        return cls([Phone(i, s, k) for i, (s, k) in enumerate(entries)])

    def __len__(self) -> int:
        return len(self.phones)

    def __contains__(self, symbol: object) -> bool:
        return symbol in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PhoneInventory) and self.phones == other.phones

    def __hash__(self) -> int:
        return hash(self.phones)

    def __repr__(self) -> str:
        return (f"PhoneInventory({len(self.canonical_ids)} canonical, "
                f"anti={'yes' if self.has_anti else 'no'})")

    @property
    def has_anti(self) -> bool:
        return bool(self._anti)

    @property
    def blank(self) -> str:
        return self.phones[BLANK_ID].symbol

    @property
    def mask(self) -> str:
        return self.phones[MASK_ID].symbol

    @property
    def canonical_symbols(self) -> list[str]:
        return [self.phones[i].symbol for i in self.canonical_ids]

    def id(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise InventoryError(f"unknown phone symbol {symbol!r}") from None

    def symbol(self, pid: int) -> str:
        if not 0 <= pid < len(self.phones):
            raise InventoryError(f"phone id {pid} out of range")
        return self.phones[pid].symbol

    def kind(self, pid: int) -> str:
        return self.phones[pid].kind

    def encode(self, symbols: Iterable[str]) -> list[int]:
        return [self.id(s) for s in symbols]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.symbol(int(i)) for i in ids]

    def anti_of(self, pid: int) -> int:
        if not self.has_anti:
            raise InventoryError("inventory has no anti-phones")
        if not 0 <= pid < len(self.phones) or self.kind(pid) != "canonical":
            raise InventoryError(f"phone id {pid} is not canonical")
        return self._anti[pid]

    def base_of(self, pid: int) -> int:
        if pid not in self._base:
            raise InventoryError(f"phone id {pid} is not an anti-phone")
        return self._base[pid]

    def is_anti(self, symbol: str) -> bool:
        return symbol in self._index and self.kind(self._index[symbol]) == "anti"


def anti_of(inv: PhoneInventory, pid: int) -> int:
    return inv.anti_of(pid)


def base_of(inv: PhoneInventory, pid: int) -> int:
    return inv.base_of(pid)


def _tsv_rows(path: Path, ncols: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != ncols or not all(cols):
                raise InventoryError(f"{path}:{lineno}: expected {ncols} tab-separated fields")
            yield lineno, cols


def load_inventory(path: str | Path) -> PhoneInventory:
    """Read an inventory TSV (``symbol<TAB>kind`` per line)."""
    phones = []
    for lineno, (symbol, kind) in _tsv_rows(Path(path), 2):
        if kind not in KINDS:
            raise InventoryError(f"{path}:{lineno}: unknown kind {kind!r}")
        if kind == "anti" and not symbol.endswith(ANTI_SUFFIX):
            raise InventoryError(f"{path}:{lineno}: anti-phone must be written base{ANTI_SUFFIX}")
        phones.append(Phone(len(phones), symbol, kind))
    return PhoneInventory(phones)


class FoldingMap:
    """Total map from source canonical symbols to a smaller target set.

    Anti-phones fold with their base: ``fold(b*) == fold(b) + "*"``. Symbols of
    the target set that are not keys fold to themselves.
    """

    def __init__(self, entries: dict[str, str], source: PhoneInventory | None = None,
                 target: Iterable[str] | None = None):
        entries = dict(entries)
        declared = set(target) if target is not None else set(entries.values())
        for src, dst in entries.items():
            if dst not in declared:
                raise InventoryError(f"fold target {dst!r} (from {src!r}) not in target inventory")
            if dst in entries and entries[dst] != dst:
                raise InventoryError(f"folding is not idempotent at {dst!r}")
        if source is not None:
            missing = [s for s in source.canonical_symbols if s not in entries]
            if missing:
                raise InventoryError(f"folding map misses source phones {missing[:5]}")
        self.entries = entries
        seen: dict[str, None] = {}
        for dst in entries.values():
            seen.setdefault(dst)
        self.targets = tuple(seen)

    def fold_symbol(self, symbol: str, collapse_anti: bool = False) -> str:
        if symbol in self.entries:
            return self.entries[symbol]
        if symbol in self.targets:
            return symbol
        if symbol.endswith(ANTI_SUFFIX):
            base = self.fold_symbol(symbol[: -len(ANTI_SUFFIX)])
            return COLLAPSED_ANTI if collapse_anti else base + ANTI_SUFFIX
        if collapse_anti and symbol == COLLAPSED_ANTI:
            return symbol
        raise InventoryError(f"cannot fold unknown symbol {symbol!r}")

    def fold(self, seq: Iterable[str], collapse_anti: bool = False) -> list[str]:
        return [self.fold_symbol(s, collapse_anti) for s in seq]

    def target_inventory(self, with_anti: bool = True, blank: str = "<blank>",
                         mask: str = "<mask>") -> PhoneInventory:
        return PhoneInventory.from_symbols(self.targets, with_anti, blank, mask)


def fold(fmap: FoldingMap, seq: Iterable[str], collapse_anti: bool = False) -> list[str]:
    return fmap.fold(seq, collapse_anti)


def load_folding(path: str | Path, source: PhoneInventory | None = None) -> FoldingMap:
    entries: dict[str, str] = {}
    for lineno, (src, dst) in _tsv_rows(Path(path), 2):
        if src in entries:
            raise InventoryError(f"{path}:{lineno}: duplicate source symbol {src!r}")
        entries[src] = dst
    return FoldingMap(entries, source)


def _data_path(name: str) -> Path:
    return Path(str(resources.files("narmdd") / "data" / name))


def default_inventory_path() -> Path:
    return _data_path("timit48.tsv")


def default_folding_path() -> Path:
    return _data_path("timit48_to_39.tsv")


def default_inventory() -> PhoneInventory:
    """The 48-phone training inventory with one anti-phone per phone."""
    return load_inventory(default_inventory_path())


def default_folding() -> FoldingMap:
    return load_folding(default_folding_path(), default_inventory())
