"""Hypothesis functions and their evaluation into behavior blocks.

Every hypothesis maps a record to one value per symbol. Evaluation always
happens on the record with its pad suffix stripped; pad positions emit 0.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (DEFAULT_PAD, BehaviorBlock, RecordBlock, SymbolDataset,
                   read_behavior_file, write_behavior_file)
from .grammar import ChartParser, Grammar, ParseTree, strip_pad

KINDS = ("tree-time", "tree-signal", "tree-depth", "keyword", "fsm", "external-file")
OUTPUT_KINDS = ("binary", "integer", "real")
TREE_KINDS = ("tree-time", "tree-signal", "tree-depth")


class HypothesisError(ValueError):
    def __init__(self, message: str, hyp_id: str | None = None):
        self.hyp_id = hyp_id
        super().__init__(f"[{hyp_id}] {message}" if hyp_id else message)


class FsmError(HypothesisError):
    pass


@dataclass(frozen=True)
class HypothesisSpec:
    hyp_id: str
    kind: str
    params: Mapping = field(default_factory=dict, compare=False, hash=False)
    output_kind: str = "binary"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise HypothesisError(f"unknown hypothesis kind {self.kind!r}", self.hyp_id)
        if self.output_kind not in OUTPUT_KINDS:
            raise HypothesisError(f"unknown output kind {self.output_kind!r}", self.hyp_id)

    @property
    def needs_tree(self) -> bool:
        return self.kind in TREE_KINDS


@dataclass(frozen=True, eq=False)
class Fsm:
    states: tuple[str, ...]
    alphabet: tuple[str, ...]
    transitions: Mapping[tuple[str, str], str]
    initial: str
    labels: Mapping[str, float]

    def __post_init__(self):
        states = set(self.states)
        if self.initial not in states:
            raise FsmError(f"initial state {self.initial!r} is not a state")
        for s in self.states:
            if s not in self.labels:
                raise FsmError(f"state {s!r} has no label")
            for a in self.alphabet:
                nxt = self.transitions.get((s, a))
                if nxt is None:
                    raise FsmError(f"transition from {s!r} on {a!r} is missing")
                if nxt not in states:
                    raise FsmError(f"transition target {nxt!r} is not a state")

    def run(self, symbols: str) -> list[str]:
        state = self.initial
        out = []
        for a in symbols:
            try:
                state = self.transitions[(state, a)]
            except KeyError:
                raise FsmError(f"symbol {a!r} is outside the FSM alphabet") from None
            out.append(state)
        return out


def read_fsm_table(text: str) -> Fsm:
    """TSV rows ``state, symbol, next_state, label``; ``label`` belongs to ``state``.

    The first row's state is the initial state.
    """
    rows = [r for r in csv.reader(io.StringIO(text), delimiter="\t") if r and not r[0].startswith("#")]
    if not rows:
        raise FsmError("empty FSM table")
    states, alphabet, transitions, labels = [], [], {}, {}
    for row in rows:
        if len(row) != 4:
            raise FsmError(f"FSM row needs 4 fields, got {row!r}")
        s, a, nxt, label = row
        for st in (s, nxt):
            if st not in states:
                states.append(st)
        if a not in alphabet:
            alphabet.append(a)
        if (s, a) in transitions and transitions[(s, a)] != nxt:
            raise FsmError(f"nondeterministic transition from {s!r} on {a!r}")
        transitions[(s, a)] = nxt
        if s in labels and labels[s] != float(label):
            raise FsmError(f"conflicting labels for state {s!r}")
        labels[s] = float(label)
    return Fsm(tuple(states), tuple(alphabet), transitions, rows[0][0], labels)


def symbol_class_fsm(alphabet: Sequence[str], members: str) -> Fsm:
    """Two-state FSM that is in state ``in`` right after reading a member symbol."""
    trans = {}
    for s in ("out", "in"):
        for a in alphabet:
            trans[(s, a)] = "in" if a in members else "out"
    return Fsm(("out", "in"), tuple(alphabet), trans, "out", {"out": 0.0, "in": 1.0})


def _padded(values: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.float64)
    out[:len(values)] = values
    return out


def keyword_hypothesis(keyword: str | Sequence[str], pad: str = DEFAULT_PAD) -> Callable[[str], np.ndarray]:
    """1 at every position covered by a case-sensitive occurrence of ``keyword``."""
    keywords = [keyword] if isinstance(keyword, str) else list(keyword)
    if not keywords or any(not k for k in keywords):
        raise HypothesisError("keyword must be non-empty")

    def h(record: str) -> np.ndarray:
        text = strip_pad(record, pad)
        return _padded(_keyword_cover(text, keywords), len(record))
    return h


def _keyword_cover(text: str, keywords) -> np.ndarray:
    out = np.zeros(len(text))
    for kw in keywords:
        i = text.find(kw)
        while i >= 0:
            out[i:i + len(kw)] = 1.0
            i = text.find(kw, i + 1)
    return out


def tree_hypothesis(node_type: str, mode: str, nesting: int | None = None,
                    grammar: Grammar | None = None) -> Callable:
    """Hypothesis over a parse tree.

    ``time`` marks every position inside a matching node's span, ``signal``
    marks only the first and last span position, ``depth`` counts matching
    nodes covering each position. ``nesting`` restricts time/signal to
    matching nodes with exactly that many matching ancestors.
    The returned callable takes ``(tree_or_failure, length)``.
    """
    if mode not in ("time", "signal", "depth"):
        raise HypothesisError(f"unknown tree hypothesis mode {mode!r}")
    if grammar is not None and node_type not in grammar.labels:
        raise HypothesisError(f"node type {node_type!r} is not a label of the grammar")

    def h(tree, length: int) -> np.ndarray:
        out = np.zeros(length)
        if not tree:
            return out
        _tree_cover(tree, node_type, mode, nesting, out)
        return out
    return h


def _tree_cover(tree: ParseTree, node_type, mode, nesting, out):
    stack = [(tree.root, 0)]
    while stack:
        node, above = stack.pop()
        if node.is_leaf:
            continue
        hit = node.label == node_type or node.lhs == node_type
        lo, hi = node.span
        if hit and hi > lo:
            if mode == "depth":
                out[lo:hi] += 1.0
            elif nesting is None or above == nesting:
                if mode == "time":
                    out[lo:hi] = 1.0
                else:
                    out[lo] = 1.0
                    out[hi - 1] = 1.0
        nxt = above + 1 if hit else above
        stack.extend((c, nxt) for c in node.children)


def fsm_hypothesis(fsm: Fsm, state: str | None = None, pad: str = DEFAULT_PAD) -> Callable[[str], np.ndarray]:
    """Emit the FSM state label (or the indicator of ``state``) after each symbol."""
    if state is not None and state not in fsm.states:
        raise FsmError(f"unknown FSM state {state!r}")

    def h(record: str) -> np.ndarray:
        text = strip_pad(record, pad)
        visited = fsm.run(text)
        if state is None:
            vals = [fsm.labels[s] for s in visited]
        else:
            vals = [1.0 if s == state else 0.0 for s in visited]
        return _padded(np.asarray(vals, dtype=np.float64), len(record))
    return h


def grammar_hypotheses(grammar: Grammar, modes: Sequence[str] = ("time", "signal")) -> list[HypothesisSpec]:
    """Two hypotheses per nonterminal by default: its time and signal encodings."""
    specs = []
    for nt in sorted(grammar.nonterminals):
        for mode in modes:
            specs.append(HypothesisSpec(f"{nt}:{mode}", f"tree-{mode}", {"node_type": nt}))
    return specs


class CompiledHypothesis:
    """A spec bound to its evaluation function."""

    def __init__(self, spec: HypothesisSpec, grammar: Grammar | None, pad: str):
        self.spec = spec
        self.pad = pad
        p = dict(spec.params)
        try:
            if spec.needs_tree:
                if grammar is None:
                    raise HypothesisError("tree hypothesis requires a grammar")
                mode = spec.kind.split("-", 1)[1]
                self._tree_fn = tree_hypothesis(p["node_type"], mode, p.get("nesting"), grammar)
            elif spec.kind == "keyword":
                self._fn = keyword_hypothesis(p["keyword"], pad)
            elif spec.kind == "fsm":
                fsm = p["fsm"] if isinstance(p.get("fsm"), Fsm) else read_fsm_table(Path(p["table"]).read_text())
                self._fn = fsm_hypothesis(fsm, p.get("state"), pad)
            elif spec.kind == "external-file":
                self._path = Path(p["path"])
                self._column = str(p.get("column", spec.hyp_id))
                self._table = None
        except KeyError as exc:
            raise HypothesisError(f"missing parameter {exc.args[0]!r}", spec.hyp_id) from None
        except HypothesisError as exc:
            if exc.hyp_id is None:
                raise type(exc)(str(exc), spec.hyp_id) from None
            raise

    def __call__(self, record: str, tree=None, record_index: int | None = None) -> np.ndarray:
        spec = self.spec
        if spec.needs_tree:
            vals = self._tree_fn(tree, len(record))
        elif spec.kind == "external-file":
            if record_index is None:
                raise HypothesisError("external-file hypothesis needs a dataset record index", spec.hyp_id)
            vals = self._external(record_index, len(record))
        else:
            vals = self._fn(record)
        return vals

    def _external(self, index: int, n_s: int) -> np.ndarray:
        if self._table is None:
            blocks = read_behavior_file(self._path)
            start = blocks[0].record_range[0]
            col = blocks[0].column_ids.index(self._column)
            data = np.concatenate([b.values[:, col] for b in blocks])
            self._table = (start, blocks[0].n_s, data)
        start, file_ns, data = self._table
        if file_ns != n_s:
            raise HypothesisError(f"external file has n_s={file_ns}, dataset has {n_s}", self.spec.hyp_id)
        i = index - start
        if i < 0 or (i + 1) * n_s > len(data):
            raise HypothesisError(f"record {index} is outside the external file", self.spec.hyp_id)
        return data[i * n_s:(i + 1) * n_s].astype(np.float64)


def check_output(spec: HypothesisSpec, values: np.ndarray) -> None:
    if not np.isfinite(values).all():
        raise HypothesisError("hypothesis produced non-finite values", spec.hyp_id)
    if spec.output_kind == "binary" and not np.isin(values, (0.0, 1.0)).all():
        raise HypothesisError("binary hypothesis produced values outside {0, 1}", spec.hyp_id)
    if spec.output_kind == "integer" and not np.array_equal(values, np.round(values)):
        raise HypothesisError("integer hypothesis produced non-integral values", spec.hyp_id)


class BehaviorCache:
    """LRU of hypothesis behavior columns keyed by (fingerprint, hyp_id, block key).

    Capacity is a byte budget. With ``directory`` set, entries are also written
    through as DNIB1 files so a later process can reuse them.
    """

    def __init__(self, capacity_bytes: int = 256 << 20, directory: str | Path | None = None):
        self.capacity_bytes = int(capacity_bytes)
        self.directory = Path(directory) if directory is not None else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._entries: OrderedDict = OrderedDict()
        self._bytes = 0
        self._lock = threading.Lock()
        self.hits = self.misses = self.evictions = self.disk_hits = 0

    def __len__(self):
        return len(self._entries)

    def _path(self, key) -> Path:
        name = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=12).hexdigest()
        return self.directory / f"{name}.dnib"

    def get(self, key):
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                self._entries.move_to_end(key)
                self.hits += 1
                return entry
        if self.directory is not None:
            path = self._path(key)
            if path.exists():
                blk = read_behavior_file(path)[0]
                values = blk.values[:, 0].copy()
                valid = blk.values[::blk.n_s, 1] > 0.5
                with self._lock:
                    self.hits += 1
                    self.disk_hits += 1
                    self._insert(key, (values, valid))
                return values, valid
        with self._lock:
            self.misses += 1
        return None

    def put(self, key, values: np.ndarray, valid: np.ndarray, n_s: int) -> None:
        values = np.asarray(values, dtype=np.float32)
        valid = np.asarray(valid, dtype=bool)
        with self._lock:
            self._insert(key, (values, valid))
        if self.directory is not None:
            path = self._path(key)
            if not path.exists():
                cols = np.stack([values, np.repeat(valid.astype(np.float32), n_s)], axis=1)
                tmp = path.with_suffix(".tmp")
                write_behavior_file([BehaviorBlock(("values", "__valid__"), (0, len(valid)), cols, n_s)], tmp)
                tmp.replace(path)

    def _insert(self, key, entry):
        size = entry[0].nbytes + entry[1].nbytes
        old = self._entries.pop(key, None)
        if old is not None:
            self._bytes -= old[0].nbytes + old[1].nbytes
        self._entries[key] = entry
        self._bytes += size
        while self._bytes > self.capacity_bytes and len(self._entries) > 1:
            _, (v, m) = self._entries.popitem(last=False)
            self._bytes -= v.nbytes + m.nbytes
            self.evictions += 1

    def clear(self, disk: bool = False) -> int:
        with self._lock:
            self._entries.clear()
            self._bytes = 0
        removed = 0
        if disk and self.directory is not None:
            for p in self.directory.glob("*.dnib"):
                p.unlink()
                removed += 1
        return removed


class HypothesisEvaluator:
    """Evaluates hypothesis specs over record blocks, sharing one parse per record."""

    def __init__(self, specs: Sequence[HypothesisSpec], grammar: Grammar | None = None,
                 cache: BehaviorCache | None = None, parse_mode: str = "viterbi",
                 pad: str = DEFAULT_PAD):
        ids = [s.hyp_id for s in specs]
        if len(set(ids)) != len(ids):
            raise HypothesisError("duplicate hypothesis ids")
        self.specs = list(specs)
        self.grammar = grammar
        self.cache = cache
        self.pad = pad
        self.parser = ChartParser(grammar, parse_mode, pad) if grammar is not None else None
        self._compiled = {s.hyp_id: CompiledHypothesis(s, grammar, pad) for s in self.specs}
        self._by_id = {s.hyp_id: s for s in self.specs}

    def spec(self, hyp_id: str) -> HypothesisSpec:
        return self._by_id[hyp_id]

    def evaluate_record(self, hyp_id: str, record: str, record_index: int | None = None) -> np.ndarray:
        """Uncached evaluation of one hypothesis on one (possibly perturbed) record."""
        fn = self._compiled[hyp_id]
        tree = self.parser.parse(record) if fn.spec.needs_tree else None
        vals = fn(record, tree, record_index)
        check_output(fn.spec, vals)
        return vals

    def evaluate(self, dataset: SymbolDataset, block: RecordBlock,
                 hyp_ids: Sequence[str] | None = None) -> BehaviorBlock:
        hyp_ids = list(hyp_ids) if hyp_ids is not None else [s.hyp_id for s in self.specs]
        n_s = dataset.n_s
        n_rec = block.n_records
        out = np.zeros((n_rec * n_s, len(hyp_ids)), dtype=np.float32)
        valid = np.ones(n_rec, dtype=bool)
        missing = []
        for j, hid in enumerate(hyp_ids):
            hit = None
            if self.cache is not None:
                hit = self.cache.get((dataset.fingerprint, hid, block.key))
            if hit is None:
                missing.append(j)
            else:
                out[:, j] = hit[0]
                if self._compiled[hid].spec.needs_tree:
                    valid &= hit[1]
        if missing:
            texts = [dataset.decode(row) for row in block.symbols]
            fns = [self._compiled[hyp_ids[j]] for j in missing]
            trees = None
            if any(f.spec.needs_tree for f in fns):
                if self.parser is None:
                    raise HypothesisError("tree hypotheses require a grammar")
                trees = [self.parser.parse(t) for t in texts]
                parsed = np.array([bool(t) for t in trees])
                valid &= parsed
            for j, fn in zip(missing, fns):
                col = np.empty(n_rec * n_s)
                try:
                    for i, text in enumerate(texts):
                        col[i * n_s:(i + 1) * n_s] = fn(text, trees[i] if trees else None,
                                                        int(block.indices[i]))
                    check_output(fn.spec, col)
                except HypothesisError as exc:
                    if exc.hyp_id is None:
                        raise HypothesisError(str(exc), fn.spec.hyp_id) from None
                    raise
                except Exception as exc:
                    raise HypothesisError(f"{type(exc).__name__}: {exc}", fn.spec.hyp_id) from exc
                out[:, j] = col
                if self.cache is not None:
                    mask = parsed if fn.spec.needs_tree else np.ones(n_rec, dtype=bool)
                    self.cache.put((dataset.fingerprint, fn.spec.hyp_id, block.key), col, mask, n_s)
        return BehaviorBlock(tuple(hyp_ids), block.record_range, out, n_s, valid)


def evaluate_hypotheses(specs: Sequence[HypothesisSpec], dataset: SymbolDataset, block: RecordBlock,
                        cache: BehaviorCache | None = None, grammar: Grammar | None = None,
                        parse_mode: str = "viterbi") -> BehaviorBlock:
    return HypothesisEvaluator(specs, grammar, cache, parse_mode, dataset.pad).evaluate(dataset, block)


def load_manifest(path: str | Path, grammar: Grammar | None = None) -> list[HypothesisSpec]:
    """JSON list of ``{"hyp_id", "kind", "params", "output_kind"}`` objects.

    An entry with ``"kind": "grammar-rules"`` expands into time/signal
    hypotheses for every nonterminal (``"modes"`` overrides the default).
    Relative ``table``/``path`` params resolve against the manifest directory.
    """
    path = Path(path)
    entries = json.loads(path.read_text(encoding="utf-8"))
    specs = []
    for e in entries:
        if e.get("kind") == "grammar-rules":
            if grammar is None:
                raise HypothesisError("grammar-rules manifest entry requires a grammar")
            specs.extend(grammar_hypotheses(grammar, e.get("modes", ("time", "signal"))))
            continue
        params = dict(e.get("params", {}))
        for k in ("table", "path"):
            if k in params and not Path(params[k]).is_absolute():
                params[k] = str(path.parent / params[k])
        specs.append(HypothesisSpec(e["hyp_id"], e["kind"], params, e.get("output_kind", "binary")))
    return specs
