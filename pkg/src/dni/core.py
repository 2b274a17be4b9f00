"""Domain types, dataset loading, the DNIB1 behavior file format and record blocks."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DEFAULT_PAD = "~"
MAGIC = b"DNIB1"


class DatasetError(ValueError):
    pass


class BehaviorFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SymbolDataset:
    """An ``n_d x n_s`` matrix of symbol indices over an ordered alphabet."""

    alphabet: tuple[str, ...]
    pad: str
    records: np.ndarray
    fingerprint: str = field(init=False)

    def __post_init__(self):
        records = np.ascontiguousarray(self.records, dtype=np.int32)
        if records.ndim != 2:
            raise DatasetError("records must be a 2-d matrix")
        if self.pad not in self.alphabet:
            raise DatasetError(f"pad symbol {self.pad!r} is not in the alphabet")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise DatasetError("alphabet contains duplicate symbols")
        if records.size and (records.min() < 0 or records.max() >= len(self.alphabet)):
            raise DatasetError("record contains an index outside the alphabet")
        records.setflags(write=False)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "fingerprint", _fingerprint(self.alphabet, self.pad, records))

    @property
    def n_d(self) -> int:
        return self.records.shape[0]

    @property
    def n_s(self) -> int:
        return self.records.shape[1]

    @property
    def pad_index(self) -> int:
        return self.alphabet.index(self.pad)

    def index_of(self, symbol: str) -> int:
        return self.alphabet.index(symbol)

    def decode(self, row: np.ndarray) -> str:
        return "".join(self.alphabet[i] for i in row)

    def record_text(self, i: int) -> str:
        return self.decode(self.records[i])

    def encode(self, text: str) -> np.ndarray:
        return encode_line(text, self.n_s, self.pad, {s: i for i, s in enumerate(self.alphabet)})

    @classmethod
    def from_lines(cls, lines: Sequence[str], n_s: int, pad: str = DEFAULT_PAD,
                   alphabet: Sequence[str] | None = None) -> "SymbolDataset":
        if not lines:
            raise DatasetError("dataset is empty")
        if alphabet is None:
            symbols = set()
            for line in lines:
                symbols.update(line[:n_s])
            symbols.discard(pad)
            alphabet = [pad] + sorted(symbols)
        else:
            alphabet = list(alphabet)
            if pad not in alphabet:
                alphabet.insert(0, pad)
        index = {s: i for i, s in enumerate(alphabet)}
        records = np.stack([encode_line(line, n_s, pad, index) for line in lines])
        return cls(tuple(alphabet), pad, records)


def _fingerprint(alphabet, pad, records: np.ndarray) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update("\x00".join(alphabet).encode("utf-8"))
    h.update(b"\x01" + pad.encode("utf-8"))
    h.update(struct.pack("<qq", *records.shape))
    h.update(records.astype("<i4", copy=False).tobytes())
    return h.hexdigest()


def encode_line(line: str, n_s: int, pad: str, index: dict[str, int]) -> np.ndarray:
    line = line[:n_s].ljust(n_s, pad)
    try:
        return np.fromiter((index[c] for c in line), dtype=np.int32, count=n_s)
    except KeyError as exc:
        raise DatasetError(f"symbol {exc.args[0]!r} is outside the declared alphabet") from None


def read_alphabet_file(path: str | Path) -> list[str]:
    """One symbol per line; a line holding only a space is kept as the space symbol."""
    text = Path(path).read_text(encoding="utf-8")
    symbols = [line for line in text.split("\n") if line != ""]
    return symbols


def load_dataset(path: str | Path, n_s: int, pad: str = DEFAULT_PAD,
                 alphabet_path: str | Path | None = None) -> SymbolDataset:
    """Load one record per line, truncated or right-padded to ``n_s`` symbols."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty dataset file")
    alphabet = read_alphabet_file(alphabet_path) if alphabet_path is not None else None
    return SymbolDataset.from_lines(lines, n_s, pad, alphabet)


def write_dataset(dataset: SymbolDataset, path: str | Path) -> None:
    """One record per line with trailing pad removed; ``load_dataset`` re-pads."""
    lines = [dataset.record_text(i).rstrip(dataset.pad) for i in range(dataset.n_d)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class UnitGroup:
    model_id: str
    unit_ids: tuple[int, ...]
    group_id: str = ""

    def __post_init__(self):
        ids = tuple(int(u) for u in self.unit_ids)
        if not ids:
            raise ValueError("unit group must not be empty")
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("unit ids must be strictly increasing")
        object.__setattr__(self, "unit_ids", ids)
        if not self.group_id:
            object.__setattr__(self, "group_id", self.model_id)


@dataclass(frozen=True)
class AffinityResult:
    model_id: str
    score_id: str
    hyp_id: str
    unit_id: int | None
    unit_score: float
    group_score: float
    n_symbols_used: int
    converged: bool
    status: str = "ok"
    group_id: str = ""

    CSV_HEADER = ("model_id", "score_id", "hyp_id", "unit_id", "unit_score",
                  "group_score", "n_symbols_used", "converged", "status")

    def csv_row(self) -> list[str]:
        return [self.model_id, self.score_id, self.hyp_id,
                "" if self.unit_id is None else str(self.unit_id),
                repr(float(self.unit_score)), repr(float(self.group_score)),
                str(self.n_symbols_used), "1" if self.converged else "0", self.status]


@dataclass(frozen=True, eq=False)
class BehaviorBlock:
    """Per-symbol behaviors: ``(records_in_block * n_s) x len(column_ids)`` float32."""

    column_ids: tuple[str, ...]
    record_range: tuple[int, int]
    values: np.ndarray
    n_s: int
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        n_rec = self.record_range[1] - self.record_range[0]
        if values.shape != (n_rec * self.n_s, len(self.column_ids)):
            raise ValueError(
                f"behavior block shape {values.shape} does not match "
                f"{n_rec} records x {self.n_s} symbols x {len(self.column_ids)} columns")
        if not np.isfinite(values).all():
            raise ValueError("behavior block contains NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "column_ids", tuple(str(c) for c in self.column_ids))
        object.__setattr__(self, "values", values)

    @property
    def n_records(self) -> int:
        return self.record_range[1] - self.record_range[0]

    def column(self, column_id: str) -> np.ndarray:
        return self.values[:, self.column_ids.index(str(column_id))]

    def __eq__(self, other):
        if not isinstance(other, BehaviorBlock):
            return NotImplemented
        return (self.column_ids == other.column_ids and self.record_range == other.record_range
                and self.n_s == other.n_s and np.array_equal(self.values, other.values))


# DNIB1 layout (little-endian):
#   magic "DNIB1" | u64 n_records | u32 n_s | u32 n_cols | u64 record_start
#   | u32 n_blocks | u32[n_blocks] block record counts
#   | n_cols x (u16 byte length, utf-8 column id) | float32 payload, row-major
_HEADER = struct.Struct("<QIIQI")


def write_behavior_file(blocks: Sequence[BehaviorBlock], path: str | Path) -> None:
    blocks = list(blocks)
    if not blocks:
        raise BehaviorFileError("no blocks to write")
    first = blocks[0]
    for prev, blk in zip(blocks, blocks[1:]):
        if blk.column_ids != first.column_ids or blk.n_s != first.n_s:
            raise BehaviorFileError("blocks must share column ids and n_s")
        if blk.record_range[0] != prev.record_range[1]:
            raise BehaviorFileError("blocks must cover contiguous record ranges")
    n_records = blocks[-1].record_range[1] - first.record_range[0]
    out = bytearray(MAGIC)
    out += _HEADER.pack(n_records, first.n_s, len(first.column_ids), first.record_range[0], len(blocks))
    out += struct.pack(f"<{len(blocks)}I", *(b.n_records for b in blocks))
    for cid in first.column_ids:
        raw = cid.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
    with open(path, "wb") as fh:
        fh.write(out)
        for blk in blocks:
            fh.write(blk.values.astype("<f4", copy=False).tobytes())


def read_behavior_header(raw: bytes):
    if raw[:len(MAGIC)] != MAGIC:
        raise BehaviorFileError("bad magic: not a DNIB1 file")
    pos = len(MAGIC)
    if len(raw) < pos + _HEADER.size:
        raise BehaviorFileError("truncated header")
    n_records, n_s, n_cols, start, n_blocks = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size
    if len(raw) < pos + 4 * n_blocks:
        raise BehaviorFileError("truncated header")
    sizes = struct.unpack_from(f"<{n_blocks}I", raw, pos)
    pos += 4 * n_blocks
    if sum(sizes) != n_records:
        raise BehaviorFileError("dimension mismatch: block sizes do not sum to n_records")
    cols = []
    for _ in range(n_cols):
        if len(raw) < pos + 2:
            raise BehaviorFileError("truncated header")
        (ln,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if len(raw) < pos + ln:
            raise BehaviorFileError("truncated header")
        cols.append(raw[pos:pos + ln].decode("utf-8"))
        pos += ln
    return n_records, n_s, tuple(cols), start, sizes, pos


def read_behavior_file(path: str | Path) -> list[BehaviorBlock]:
    raw = Path(path).read_bytes()
    n_records, n_s, cols, start, sizes, pos = read_behavior_header(raw)
    expected = n_records * n_s * len(cols) * 4
    payload = len(raw) - pos
    if payload < expected:
        raise BehaviorFileError(f"truncated payload: {payload} bytes, header implies {expected}")
    if payload > expected:
        raise BehaviorFileError(f"dimension mismatch: {payload - expected} trailing payload bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=pos).reshape(n_records * n_s, len(cols))
    blocks, row, rec = [], 0, start
    for size in sizes:
        rows = size * n_s
        blocks.append(BehaviorBlock(cols, (rec, rec + size), data[row:row + rows].astype(np.float32), n_s))
        row += rows
        rec += size
    return blocks


@dataclass(frozen=True, eq=False)
class RecordBlock:
    """A slice of the record stream.

    ``record_range`` is the half-open interval of stream positions; ``indices``
    holds the dataset rows at those positions (the stream is a seeded
    permutation). ``symbol_perm`` reorders the block's symbol rows before
    measures consume them.
    """

    block_index: int
    record_range: tuple[int, int]
    indices: np.ndarray
    symbols: np.ndarray
    symbol_perm: np.ndarray

    @property
    def n_records(self) -> int:
        return len(self.indices)

    @property
    def key(self) -> tuple[int, int, str]:
        digest = hashlib.blake2b(self.indices.astype("<i8").tobytes(), digest_size=8).hexdigest()
        return (self.record_range[0], self.record_range[1], digest)


def record_permutation(n_d: int, seed: int | None) -> np.ndarray:
    if seed is None:
        return np.arange(n_d)
    return np.random.default_rng(seed).permutation(n_d)


def block_iterator(dataset: SymbolDataset, n_b: int, seed: int | None = 0,
                   max_records: int | None = None) -> Iterator[RecordBlock]:
    """Yield ``ceil(n_d / n_b)`` blocks covering every record exactly once.

    ``seed=None`` keeps the stored order and an identity symbol order.
    """
    if n_b < 1:
        raise ValueError("n_b must be >= 1")
    order = record_permutation(dataset.n_d, seed)
    if max_records is not None:
        order = order[:max_records]
    n_s = dataset.n_s
    for b, start in enumerate(range(0, len(order), n_b)):
        idx = order[start:start + n_b]
        n_rows = len(idx) * n_s
        if seed is None:
            perm = np.arange(n_rows)
        else:
            perm = np.random.default_rng([seed, b]).permutation(n_rows)
        yield RecordBlock(b, (start, start + len(idx)), idx, dataset.records[idx], perm)


def n_blocks(n_d: int, n_b: int) -> int:
    return -(-n_d // n_b)
