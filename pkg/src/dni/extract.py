"""Unit-behavior extractors: stored DNIB1 files, a seeded Elman RNN, and specialized units."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DEFAULT_PAD, BehaviorBlock, RecordBlock, read_behavior_file

MODEL_KINDS = ("file", "synthetic-rnn", "specialized")
DEFAULT_SIGMA = 0.05


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    kind: str
    n_units: int
    seed: int = 0
    path: str | None = None
    S: tuple[int, ...] = ()
    w: float = 0.5
    target_hyp: str | None = None
    sigma: float = DEFAULT_SIGMA
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ExtractionError(f"unknown model kind {self.kind!r}")
        if self.n_units < 1:
            raise ExtractionError("n_units must be positive")
        object.__setattr__(self, "S", tuple(int(u) for u in self.S))
        if any(u < 0 or u >= self.n_units for u in self.S) or len(set(self.S)) != len(self.S):
            raise ExtractionError(f"S={self.S} is not a subset of 0..{self.n_units - 1}")
        if not 0.0 <= self.w <= 1.0:
            raise ExtractionError("w must lie in [0, 1]")
        if self.sigma < 0:
            raise ExtractionError("sigma must be non-negative")
        if self.kind == "file" and not self.path:
            raise ExtractionError("file model needs a path")
        if self.kind == "specialized" and not self.target_hyp:
            raise ExtractionError("specialized model needs a target hypothesis")


def rnn_weights(n_units: int, n_alpha: int, seed: int, pad_index: int | None):
    rng = np.random.default_rng(seed)
    a = 1.0 / np.sqrt(n_units + n_alpha)
    W_x = rng.uniform(-a, a, size=(n_units, n_alpha))
    W_h = rng.uniform(-a, a, size=(n_units, n_units))
    if pad_index is not None:
        W_x[:, pad_index] = 0.0
    return W_x, W_h


def rnn_activations(symbols: np.ndarray, W_x: np.ndarray, W_h: np.ndarray) -> np.ndarray:
    """h_t = tanh(W_x onehot(s_t) + W_h h_{t-1}), h_0 = 0; returns (n_rec, n_s, n_units)."""
    symbols = np.asarray(symbols)
    n_rec, n_s = symbols.shape
    emb = W_x.T
    out = np.empty((n_rec, n_s, W_x.shape[0]))
    h = np.zeros((n_rec, W_x.shape[0]))
    for t in range(n_s):
        h = np.tanh(emb[symbols[:, t]] + h @ W_h.T)
        out[:, t] = h
    return out


def _record_seed(seed: int, row: np.ndarray) -> int:
    digest = hashlib.blake2b(np.ascontiguousarray(row, dtype=np.int32).tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Extractor:
    """Binds a ModelSpec to an alphabet. ``extract`` is a pure function of its inputs."""

    def __init__(self, model: ModelSpec, alphabet: Sequence[str], pad: str = DEFAULT_PAD, hypotheses=None):
        self.model = model
        self.alphabet = tuple(alphabet)
        self.pad = pad
        self.extracted_units: set[int] = set()
        self.n_calls = 0
        pad_index = self.alphabet.index(pad) if pad in self.alphabet else None
        self._table = None
        if model.kind in ("synthetic-rnn", "specialized"):
            self.W_x, self.W_h = rnn_weights(model.n_units, len(self.alphabet), model.seed, pad_index)
        if model.kind == "specialized":
            if hypotheses is None:
                raise ExtractionError("specialized model needs a hypothesis evaluator")
            hypotheses.spec(model.target_hyp)
            self.hypotheses = hypotheses

    def _check_units(self, unit_ids) -> np.ndarray:
        ids = np.asarray(list(unit_ids), dtype=np.int64)
        bad = ids[(ids < 0) | (ids >= self.model.n_units)]
        if bad.size:
            raise ExtractionError(f"unknown unit id {int(bad[0])} for model {self.model.model_id!r} "
                                  f"with {self.model.n_units} units")
        return ids

    def extract(self, symbols: np.ndarray, unit_ids: Sequence[int], indices: np.ndarray | None = None) -> np.ndarray:
        """Behaviors as a (n_rec * n_s, len(unit_ids)) float32 matrix, record-major."""
        ids = self._check_units(unit_ids)
        symbols = np.atleast_2d(np.asarray(symbols))
        n_rec, n_s = symbols.shape
        self.n_calls += 1
        self.extracted_units.update(int(u) for u in ids)
        kind = self.model.kind
        if kind == "file":
            return self._from_file(indices, n_s, ids)
        acts = self._base(symbols)[:, :, ids]
        if kind == "specialized":
            acts = self._specialize(symbols, acts, ids)
        return acts.reshape(n_rec * n_s, len(ids)).astype(np.float32)

    def _base(self, symbols):
        return rnn_activations(symbols, self.W_x, self.W_h)

    def _specialize(self, symbols, acts, ids):
        m = self.model
        cols = [j for j, u in enumerate(ids) if u in m.S]
        if not cols:
            return acts
        n_s = symbols.shape[1]
        for i, row in enumerate(symbols):
            text = "".join(self.alphabet[s] for s in row)
            h = self.hypotheses.evaluate_record(m.target_hyp, text)
            if m.sigma > 0:
                rng = np.random.default_rng([m.seed, _record_seed(m.seed, row)])
                noise = rng.normal(0.0, m.sigma, size=(n_s, m.n_units))[:, ids[cols]]
            else:
                noise = 0.0
            acts[i][:, cols] = m.w * h[:, None] + (1.0 - m.w) * acts[i][:, cols] + noise
        return acts

    def _from_file(self, indices, n_s, ids):
        if indices is None:
            raise ExtractionError("file extractor needs dataset record indices")
        if self._table is None:
            blocks = read_behavior_file(self.model.path)
            b0 = blocks[0]
            try:
                col_of = {int(c): j for j, c in enumerate(b0.column_ids)}
            except ValueError:
                col_of = {j: j for j in range(len(b0.column_ids))}
            data = np.concatenate([b.values for b in blocks]).reshape(-1, b0.n_s, len(b0.column_ids))
            self._table = (b0.record_range[0], b0.n_s, data, col_of)
        start, file_ns, data, col_of = self._table
        if file_ns != n_s:
            raise ExtractionError(f"stored behaviors have n_s={file_ns}, records have {n_s}")
        idx = np.asarray(indices, dtype=np.int64) - start
        if idx.size and (idx.min() < 0 or idx.max() >= len(data)):
            raise ExtractionError("record range lies outside the stored behavior file")
        try:
            cols = [col_of[int(u)] for u in ids]
        except KeyError as exc:
            raise ExtractionError(f"unit {exc.args[0]} is not stored in {self.model.path}") from None
        return data[idx][:, :, cols].reshape(len(idx) * n_s, len(cols)).astype(np.float32)

    def extract_block(self, block: RecordBlock, unit_ids: Sequence[int]) -> BehaviorBlock:
        vals = self.extract(block.symbols, unit_ids, block.indices)
        return BehaviorBlock(tuple(str(u) for u in unit_ids), block.record_range, vals, block.symbols.shape[1])


def build_extractor(model: ModelSpec, alphabet: Sequence[str], pad: str = DEFAULT_PAD, hypotheses=None) -> Extractor:
    return Extractor(model, alphabet, pad, hypotheses)


def extract(model: ModelSpec, records: RecordBlock, unit_ids: Sequence[int], alphabet: Sequence[str],
            pad: str = DEFAULT_PAD, hypotheses=None) -> BehaviorBlock:
    return Extractor(model, alphabet, pad, hypotheses).extract_block(records, unit_ids)


def write_model_behaviors(extractor: Extractor, dataset, path: str | Path, n_b: int = 512) -> None:
    """Materialize every unit over the dataset, in record order, as a DNIB1 file."""
    from .core import block_iterator, write_behavior_file
    units = list(range(extractor.model.n_units))
    blocks = [extractor.extract_block(b, units) for b in block_iterator(dataset, n_b, seed=None)]
    write_behavior_file(blocks, path)
