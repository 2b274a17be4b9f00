"""Bundled grammars and seeded workloads for tests, benchmarks and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_PAD, SymbolDataset, UnitGroup
from .extract import Extractor, ModelSpec
from .grammar import Grammar, parse_grammar_file, sample_many
from .hypothesis import (Fsm, HypothesisEvaluator, HypothesisSpec, grammar_hypotheses,
                         symbol_class_fsm)
from .measures import MeasureSpec

# Nested parentheses with a digit naming the current level, up to 4 levels.
PAREN_GRAMMAR = """\
r0 -> 0 r0 [0.5] | ( r1 ) [0.5]
r1 -> 1 r1 [0.5] | ( r2 ) [0.5]
r2 -> 2 r2 [0.5] | ( r3 ) [0.5]
r3 -> 3 r3 [0.5] | ( r4 ) [0.5]
r4 -> [0.5] | 4 r4 [0.5]
"""

SQL_GRAMMAR = """\
Q -> 'SELECT ' COLS ' FROM ' TAB WH [1.0]
WH -> [0.4] | ' WHERE ' PRED [0.6] @where
COLS -> COL [0.6] | COL ',' COLS [0.4] @collist
COL -> a [0.3] | b [0.3] | c [0.2] | '*' [0.2]
TAB -> t [0.4] | u [0.3] | v [0.3]
PRED -> COL OP NUM [0.7] @cmp | PRED ' AND ' PRED [0.15] @and | '(' PRED ')' [0.15] @group
OP -> '=' [0.4] | '<' [0.3] | '>' [0.3]
NUM -> DIG [0.7] | DIG NUM [0.3]
DIG -> 0 [0.1] | 1 [0.1] | 2 [0.1] | 3 [0.1] | 4 [0.1] | 5 [0.1] | 6 [0.1] | 7 [0.1] | 8 [0.1] | 9 [0.1]
"""


def paren_grammar() -> Grammar:
    return parse_grammar_file(PAREN_GRAMMAR)


def sql_grammar() -> Grammar:
    return parse_grammar_file(SQL_GRAMMAR)


def grammar_dataset(grammar: Grammar, n: int, n_s: int, seed: int, max_len: int | None = None,
                    pad: str = DEFAULT_PAD) -> SymbolDataset:
    """Sample ``n`` strings; longer ones are truncated to ``n_s`` when loaded."""
    lines = sample_many(grammar, n, seed, max_len or n_s)
    return SymbolDataset.from_lines(lines, n_s, pad, alphabet=[pad] + sorted(grammar.terminals))


def nesting_fsm(alphabet, max_depth: int = 5) -> Fsm:
    """State = current parenthesis depth, clipped to ``[0, max_depth]``; label = depth."""
    states = tuple(str(d) for d in range(max_depth + 1))
    trans = {}
    for d in range(max_depth + 1):
        for a in alphabet:
            nd = min(d + 1, max_depth) if a == "(" else max(d - 1, 0) if a == ")" else d
            trans[(str(d), a)] = str(nd)
    return Fsm(states, tuple(alphabet), trans, "0", {s: float(s) for s in states})


def paren_hypotheses(alphabet) -> list[HypothesisSpec]:
    symbols = [a for a in alphabet if a != DEFAULT_PAD]
    depth = nesting_fsm(symbols)
    return [
        HypothesisSpec("paren", "fsm", {"fsm": symbol_class_fsm(symbols, "()")}, "binary"),
        HypothesisSpec("depth", "fsm", {"fsm": depth}, "integer"),
        HypothesisSpec("depth4", "fsm", {"fsm": depth, "state": "4"}, "binary"),
    ]


def sql_hypotheses(grammar: Grammar) -> list[HypothesisSpec]:
    """Time and signal hypotheses for every nonterminal plus two keyword detectors."""
    return grammar_hypotheses(grammar) + [
        HypothesisSpec("kw:SELECT", "keyword", {"keyword": "SELECT"}),
        HypothesisSpec("kw:WHERE", "keyword", {"keyword": "WHERE"}),
    ]


@dataclass
class Workload:
    dataset: SymbolDataset
    hypotheses: list[HypothesisSpec]
    groups: list[UnitGroup]
    extractors: dict[str, Extractor]
    measures: list[MeasureSpec]
    grammar: Grammar | None = None
    evaluator: HypothesisEvaluator | None = None
    models: dict[str, ModelSpec] = field(default_factory=dict)

    def plan(self, config=None, cache=None, measures=None):
        from .engine import plan
        ev = HypothesisEvaluator(self.hypotheses, self.grammar, cache, pad=self.dataset.pad)
        return plan(self.groups, self.hypotheses, measures or self.measures, config, self.extractors, ev)


def correlation_workload(n_records: int = 10_000, n_s: int = 30, n_units: int = 64, seed: int = 0,
                         model_seed: int = 1) -> Workload:
    """SQL-like records, a synthetic RNN, and 20 grammar/keyword hypotheses scored by Pearson."""
    g = sql_grammar()
    ds = grammar_dataset(g, n_records, n_s, seed, max_len=n_s + 8)
    hyps = sql_hypotheses(g)
    model = ModelSpec("rnn", "synthetic-rnn", n_units, model_seed)
    ext = Extractor(model, ds.alphabet, ds.pad)
    return Workload(ds, hyps, [UnitGroup("rnn", tuple(range(n_units)))], {"rnn": ext},
                    [MeasureSpec("corr", "pearson")], g, models={"rnn": model})


def specialized_workload(n_records: int = 2000, n_s: int = 30, seed: int = 0, w: float = 0.5,
                         sigma: float = 0.05, n_units: int = 16, n_specialized: int = 4,
                         target: str = "paren", S=None) -> Workload:
    """Nested-parenthesis records and a 16-unit model whose units in S track ``target``."""
    g = paren_grammar()
    ds = grammar_dataset(g, n_records, n_s, seed)
    hyps = paren_hypotheses(ds.alphabet)
    ev = HypothesisEvaluator(hyps, None, pad=ds.pad)
    if S is None:
        rng = np.random.default_rng([seed, 7])
        S = tuple(sorted(int(u) for u in rng.choice(n_units, n_specialized, replace=False)))
    model = ModelSpec("spec", "specialized", n_units, seed + 1000, S=tuple(S), w=w, target_hyp=target, sigma=sigma)
    ext = Extractor(model, ds.alphabet, ds.pad, ev)
    return Workload(ds, hyps, [UnitGroup("spec", tuple(range(n_units)))], {"spec": ext},
                    [MeasureSpec("logreg", "logreg")], None, ev, {"spec": model})
