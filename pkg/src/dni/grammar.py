"""Probabilistic context-free grammars: parsing grammar files, sampling, Earley parsing.

Grammar file lines look like::

    S -> ( S ) [0.5] | x [0.5]
    KW -> 'SELECT' [1.0] @keyword

Quoted tokens are terminal strings (expanded into one terminal per character),
unquoted tokens are nonterminals when they appear on some left-hand side and
single-character terminals otherwise. An alternative with no symbols, ``ε`` or
``''`` derives the empty string. ``@name`` attaches a label to a production;
unlabelled productions are labelled by their left-hand side.
"""

from __future__ import annotations

import math
import random
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterator

from .core import DEFAULT_PAD


class GrammarError(ValueError):
    pass


class SampleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Production:
    index: int
    lhs: str
    rhs: tuple[str, ...]
    is_nt: tuple[bool, ...]
    prob: float
    label: str

    def __str__(self):
        parts = [s if nt else repr(s) for s, nt in zip(self.rhs, self.is_nt)]
        return f"{self.lhs} -> {' '.join(parts) or 'ε'} [{self.prob}]"


@dataclass(frozen=True, eq=False)
class Grammar:
    productions: tuple[Production, ...]
    start: str
    nonterminals: frozenset[str] = field(init=False)
    terminals: frozenset[str] = field(init=False)
    by_lhs: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not self.productions:
            raise GrammarError("grammar has no productions")
        nts = frozenset(p.lhs for p in self.productions)
        terms = set()
        by_lhs = defaultdict(list)
        for p in self.productions:
            by_lhs[p.lhs].append(p.index)
            for sym, nt in zip(p.rhs, p.is_nt):
                if nt and sym not in nts:
                    raise GrammarError(f"undeclared nonterminal {sym!r} in production {p}")
                if not nt:
                    terms.add(sym)
        if self.start not in nts:
            raise GrammarError(f"start symbol {self.start!r} has no productions")
        for lhs, idx in by_lhs.items():
            total = sum(self.productions[i].prob for i in idx)
            if abs(total - 1.0) > 1e-9:
                raise GrammarError(f"probabilities for {lhs!r} sum to {total}, not 1")
        object.__setattr__(self, "nonterminals", nts)
        object.__setattr__(self, "terminals", frozenset(terms))
        object.__setattr__(self, "by_lhs", {k: tuple(v) for k, v in by_lhs.items()})

    @property
    def labels(self) -> frozenset[str]:
        return frozenset(p.label for p in self.productions) | self.nonterminals

    def to_text(self) -> str:
        lines = []
        for p in self.productions:
            syms = []
            for s, nt in zip(p.rhs, p.is_nt):
                syms.append(s if nt else "'" + s.replace("\\", "\\\\").replace("'", "\\'") + "'")
            label = f" @{p.label}" if p.label != p.lhs else ""
            lines.append(f"{p.lhs} -> {' '.join(syms)} [{p.prob!r}]{label}")
        return "\n".join(lines) + "\n"


_TOKEN = re.compile(r"""'((?:[^'\\]|\\.)*)'|"((?:[^"\\]|\\.)*)"|\[([^\]\s]*)\]|@(\S+)|(\|)|(\S+)""")


def _unescape(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s)


def parse_grammar_file(text: str) -> Grammar:
    """Parse grammar text into a validated :class:`Grammar`; the first LHS is the start symbol."""
    raw_rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "->" not in stripped:
            raise GrammarError(f"line {lineno}: expected 'LHS -> ...'")
        lhs, rhs = stripped.split("->", 1)
        lhs = lhs.strip()
        if not lhs or len(lhs.split()) != 1:
            raise GrammarError(f"line {lineno}: bad left-hand side {lhs!r}")
        raw_rules.append((lineno, lhs, rhs))
    if not raw_rules:
        raise GrammarError("grammar has no productions")
    declared = {lhs for _, lhs, _ in raw_rules}

    productions = []
    for lineno, lhs, rhs in raw_rules:
        alt: list[tuple[str, bool]] = []
        prob = None
        label = None

        def flush():
            nonlocal alt, prob, label
            if prob is None:
                raise GrammarError(f"line {lineno}: alternative of {lhs!r} lacks a [probability]")
            rhs_syms = tuple(s for s, _ in alt)
            flags = tuple(nt for _, nt in alt)
            productions.append(Production(len(productions), lhs, rhs_syms, flags, prob, label or lhs))
            alt, prob, label = [], None, None

        for m in _TOKEN.finditer(rhs):
            squote, dquote, pr, lab, bar, bare = m.groups()
            if bar:
                flush()
            elif pr is not None:
                try:
                    prob = float(pr)
                except ValueError:
                    raise GrammarError(f"line {lineno}: bad probability [{pr}]") from None
                if not 0.0 < prob <= 1.0:
                    raise GrammarError(f"line {lineno}: probability {prob} outside (0, 1]")
            elif lab is not None:
                label = lab
            elif squote is not None or dquote is not None:
                alt.extend((c, False) for c in _unescape(squote if squote is not None else dquote))
            elif bare in ("ε", "''"):
                continue
            elif bare in declared:
                alt.append((bare, True))
            elif len(bare) == 1:
                alt.append((bare, False))
            else:
                raise GrammarError(f"line {lineno}: undeclared symbol {bare!r}")
        flush()
    return Grammar(tuple(productions), raw_rules[0][1])


def sample(grammar: Grammar, seed: int | random.Random, max_len: int, max_retries: int = 200) -> str:
    """Leftmost stochastic derivation; derivations longer than ``max_len`` are resampled."""
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    prods = grammar.productions
    cum = {lhs: _cumulative([prods[i].prob for i in idx]) for lhs, idx in grammar.by_lhs.items()}
    max_steps = 64 * (max_len + 16)
    for _ in range(max_retries):
        out: list[str] = []
        stack = [(grammar.start, True)]
        steps = 0
        ok = True
        while stack:
            sym, nt = stack.pop()
            if not nt:
                out.append(sym)
                if len(out) > max_len:
                    ok = False
                    break
                continue
            steps += 1
            if steps > max_steps:
                ok = False
                break
            idx = grammar.by_lhs[sym]
            p = prods[idx[_choose(cum[sym], rng.random())]]
            stack.extend(reversed(list(zip(p.rhs, p.is_nt))))
        if ok:
            return "".join(out)
    raise SampleError(f"no derivation of length <= {max_len} after {max_retries} attempts")


def sample_many(grammar: Grammar, n: int, seed: int, max_len: int) -> list[str]:
    rng = random.Random(seed)
    return [sample(grammar, rng, max_len) for _ in range(n)]


def _cumulative(ps):
    total, out = 0.0, []
    for p in ps:
        total += p
        out.append(total)
    return out


def _choose(cum, u):
    u *= cum[-1]
    for i, c in enumerate(cum):
        if u < c:
            return i
    return len(cum) - 1


@dataclass(eq=False)
class ParseNode:
    label: str
    span: tuple[int, int]
    depth: int
    children: list["ParseNode"] = field(default_factory=list)
    production: int = -1
    lhs: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.production < 0

    def iter_nodes(self) -> Iterator["ParseNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(eq=False)
class ParseTree:
    root: ParseNode
    log_prob: float
    length: int

    def __bool__(self):
        return True

    def nodes(self) -> Iterator[ParseNode]:
        return self.root.iter_nodes()


@dataclass(frozen=True)
class ParseFailure:
    reason: str

    def __bool__(self):
        return False


def strip_pad(record: str, pad: str = DEFAULT_PAD) -> str:
    return record.rstrip(pad) if pad else record


class ChartParser:
    """Earley chart parser over the Viterbi (max, +) semiring in log space.

    ``mode="first"`` ignores probabilities, returning the first derivation
    found in production-index order.
    """

    def __init__(self, grammar: Grammar, mode: str = "viterbi", pad: str = DEFAULT_PAD):
        if mode not in ("viterbi", "first"):
            raise ValueError(f"unknown parse mode {mode!r}")
        self.grammar = grammar
        self.mode = mode
        self.pad = pad
        self.n_parses = 0
        prods = grammar.productions
        self._rhs = [p.rhs for p in prods]
        self._nt = [p.is_nt for p in prods]
        self._lhs = [p.lhs for p in prods]
        self._len = [len(p.rhs) for p in prods]
        if mode == "viterbi":
            self._logp = [math.log(p.prob) for p in prods]
        else:
            self._logp = [0.0] * len(prods)

    def parse(self, record: str) -> ParseTree | ParseFailure:
        self.n_parses += 1
        text = strip_pad(record, self.pad)
        n = len(text)
        rhs, isnt, lhs, plen, logp = self._rhs, self._nt, self._lhs, self._len, self._logp
        by_lhs = self.grammar.by_lhs
        # items[k][(p, dot, origin)] = [score, backpointer]
        # backpointer = (prev_set, prev_key, child_set, child_key); child_set None -> terminal
        items: list[dict] = [dict() for _ in range(n + 1)]
        waiting: list[dict] = [defaultdict(dict) for _ in range(n + 1)]
        null_best: list[dict] = [dict() for _ in range(n + 1)]
        scanners: list[dict] = [defaultdict(set) for _ in range(n + 1)]

        for q in by_lhs[self.grammar.start]:
            items[0][(q, 0, 0)] = [logp[q], None]
        for k in range(n + 1):
            chart = items[k]
            agenda = deque(chart.keys())
            wait_k = waiting[k]
            null_k = null_best[k]

            def update(key, score, bp):
                cur = chart.get(key)
                if cur is None or score > cur[0] + 1e-12:
                    chart[key] = [score, bp]
                    agenda.append(key)

            while agenda:
                key = agenda.popleft()
                p, dot, origin = key
                score = chart[key][0]
                if dot == plen[p]:
                    a = lhs[p]
                    if origin == k:
                        best = null_k.get(a)
                        if best is None or score > chart[best][0] + 1e-12:
                            null_k[a] = key
                            for wkey in list(wait_k[a]):
                                wp, wdot, worig = wkey
                                update((wp, wdot + 1, worig), chart[wkey][0] + score, (k, wkey, k, key))
                    else:
                        src = items[origin]
                        for wkey in waiting[origin].get(a, ()):
                            wp, wdot, worig = wkey
                            update((wp, wdot + 1, worig), src[wkey][0] + score, (origin, wkey, k, key))
                    continue
                sym = rhs[p][dot]
                if isnt[p][dot]:
                    lst = wait_k[sym]
                    if key not in lst:
                        lst[key] = None
                        for q in by_lhs[sym]:
                            qkey = (q, 0, k)
                            if qkey not in chart:
                                chart[qkey] = [logp[q], None]
                                agenda.append(qkey)
                    nb = null_k.get(sym)
                    if nb is not None:
                        update((p, dot + 1, origin), score + chart[nb][0], (k, key, k, nb))
                elif k < n and sym == text[k]:
                    scanners[k][sym].add(key)
            if k < n:
                nxt = items[k + 1]
                for key in sorted(scanners[k].get(text[k], ())):
                    p, dot, origin = key
                    nxt[(p, dot + 1, origin)] = [chart[key][0], (k, key, None, k)]

        final = items[n]
        best_key = None
        for q in by_lhs[self.grammar.start]:
            key = (q, plen[q], 0)
            if key in final and (best_key is None or final[key][0] > final[best_key][0] + 1e-12):
                best_key = key
        if best_key is None:
            return ParseFailure(f"no parse for {text!r}")
        root = self._build(items, text, n, best_key, 0)
        return ParseTree(root, final[best_key][0], n)

    def _build(self, items, text, k, key, depth) -> ParseNode:
        p, dot, origin = key
        node = ParseNode(self.grammar.productions[p].label, (origin, k), depth,
                         production=p, lhs=self._lhs[p])
        children = []
        cur_set, cur_key = k, key
        bp = items[cur_set][cur_key][1]
        while bp is not None:
            prev_set, prev_key, child_set, child_key = bp
            if child_set is None:
                children.append(ParseNode(text[child_key], (child_key, child_key + 1), depth + 1))
            else:
                children.append(self._build(items, text, child_set, child_key, depth + 1))
            cur_set, cur_key = prev_set, prev_key
            bp = items[cur_set][cur_key][1]
        children.reverse()
        node.children = children
        return node


def parse(grammar: Grammar, record: str, mode: str = "viterbi", pad: str = DEFAULT_PAD):
    """Parse one record (trailing pad stripped); returns a ParseTree or a ParseFailure."""
    return ChartParser(grammar, mode, pad).parse(record)


def tree_log_prob(grammar: Grammar, tree: ParseTree) -> float:
    total = 0.0
    for node in tree.nodes():
        if not node.is_leaf:
            total += math.log(grammar.productions[node.production].prob)
    return total


def check_spans(tree: ParseTree) -> bool:
    """True when every node's children partition its span in order with depth + 1."""
    if tree.root.span != (0, tree.length):
        return False
    for node in tree.nodes():
        if node.is_leaf:
            if node.span[1] - node.span[0] != 1:
                return False
            continue
        pos = node.span[0]
        for child in node.children:
            if child.span[0] != pos or child.depth != node.depth + 1:
                return False
            pos = child.span[1]
        if pos != node.span[1]:
            return False
    return True
