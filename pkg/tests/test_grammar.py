import math
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dni.grammar import (ChartParser, GrammarError, ParseFailure, SampleError, check_spans, parse,
                         parse_grammar_file, sample, sample_many, tree_log_prob)
from dni.workloads import PAREN_GRAMMAR, SQL_GRAMMAR

ARITH = """E -> ( E ) [0.2] @paren | E + E [0.2] | T [0.6]
T -> 1 [0.5] | 2 [0.5]"""


def min_yield(grammar):
    """Shortest terminal yield per nonterminal, by fixed-point iteration."""
    inf = float("inf")
    m = {nt: inf for nt in grammar.nonterminals}
    changed = True
    while changed:
        changed = False
        for p in grammar.productions:
            v = sum(m[s] if nt else 1 for s, nt in zip(p.rhs, p.is_nt))
            if v < m[p.lhs]:
                m[p.lhs], changed = v, True
    return m


def enumerate_tree_probs(grammar, text):
    """All derivation probabilities of ``text`` by brute-force span splitting (cycle-free grammars)."""
    mins = min_yield(grammar)

    def need(p, k):
        return sum(mins[s] if nt else 1 for s, nt in zip(p.rhs[k:], p.is_nt[k:]))

    @lru_cache(maxsize=None)
    def sym(s, i, j, is_nt):
        if not is_nt:
            return (1.0,) if j == i + 1 and text[i] == s else ()
        out = []
        for pi in grammar.by_lhs[s]:
            p = grammar.productions[pi]
            for probs in seq(pi, 0, i, j):
                out.append(p.prob * probs)
        return tuple(out)

    @lru_cache(maxsize=None)
    def seq(pi, k, i, j):
        p = grammar.productions[pi]
        if k == len(p.rhs):
            return (1.0,) if i == j else ()
        out = []
        first = mins[p.rhs[k]] if p.is_nt[k] else 1
        for m in range(i + first, j - need(p, k + 1) + 1):
            for a in sym(p.rhs[k], i, m, p.is_nt[k]):
                for b in seq(pi, k + 1, m, j):
                    out.append(a * b)
        return tuple(out)

    return list(sym(grammar.start, 0, len(text), True))


def balanced(s):
    depth = 0
    for c in s:
        depth += c == "("
        depth -= c == ")"
        if depth < 0:
            return False
    return depth == 0


def test_parse_two_production_grammar():
    g = parse_grammar_file("S -> ( S ) [0.5]\nS -> x [0.5]")
    assert len(g.productions) == 2 and g.start == "S"
    assert g.terminals == {"(", ")", "x"}


def test_probabilities_must_sum_to_one():
    with pytest.raises(GrammarError):
        parse_grammar_file("S -> a [0.5] | b [0.6]")


def test_undeclared_multi_char_symbol_rejected():
    with pytest.raises(GrammarError):
        parse_grammar_file("S -> abc [1.0]")


def test_nested_paren_grammar_accepted_and_parses_example():
    g = parse_grammar_file(PAREN_GRAMMAR)
    assert g.start == "r0" and len(g.nonterminals) == 5
    tree = parse(g, "0(1(2((44))))")
    assert tree and check_spans(tree)


def test_quoted_terminal_strings_expand_per_character():
    g = parse_grammar_file(SQL_GRAMMAR)
    q = next(p for p in g.productions if p.lhs == "Q")
    assert "".join(s for s, nt in zip(q.rhs, q.is_nt) if not nt).startswith("SELECT ")


def test_arith_paren_spans():
    g = parse_grammar_file(ARITH)
    tree = parse(g, "((1+2))")
    assert tree.root.span == (0, 7)
    parens = [n for n in tree.nodes() if n.label == "paren"]
    assert sorted(n.span for n in parens) == [(0, 7), (1, 6)]
    plus = [n for n in tree.nodes() if not n.is_leaf and len(n.children) == 3 and n.children[1].label == "+"]
    assert plus[0].span == (2, 5)


def test_single_terminal_tree():
    g = parse_grammar_file("S -> x [1.0]")
    tree = parse(g, "x")
    assert tree.root.span == (0, 1)
    assert len(tree.root.children) == 1 and tree.root.children[0].is_leaf


def test_incomplete_record_fails():
    g = parse_grammar_file(PAREN_GRAMMAR)
    res = parse(g, "((")
    assert isinstance(res, ParseFailure) and not res


def test_pad_suffix_is_stripped():
    g = parse_grammar_file(ARITH)
    tree = parse(g, "(1)~~~")
    assert tree.length == 3 and tree.root.span == (0, 3)


def test_sample_deterministic():
    g = parse_grammar_file(PAREN_GRAMMAR)
    assert sample(g, 42, 30) == sample(g, 42, 30)
    assert sample_many(g, 5, 1, 30) == sample_many(g, 5, 1, 30)


def test_sample_retry_budget():
    g = parse_grammar_file("S -> 'aaaaaaaaaa' [1.0]")
    with pytest.raises(SampleError):
        sample(g, 0, 5, max_retries=10)


def test_paren_samples_balanced_and_parse():
    g = parse_grammar_file(PAREN_GRAMMAR)
    p = ChartParser(g)
    samples = sample_many(g, 1000, 7, 30)
    assert all(len(s) <= 30 for s in samples)
    assert all(balanced(s) for s in samples)
    for s in samples:
        tree = p.parse(s)
        assert tree, s
        assert check_spans(tree)


def test_sql_samples_parse():
    g = parse_grammar_file(SQL_GRAMMAR)
    p = ChartParser(g)
    for s in sample_many(g, 300, 3, 60):
        tree = p.parse(s)
        assert tree and check_spans(tree)
        assert math.isclose(tree.log_prob, tree_log_prob(g, tree), abs_tol=1e-9)


@pytest.mark.parametrize("text", ["1", "1+2", "(1)+2", "1+2+1", "((1+2))", "1+(2+1)+2", "1+2+1+2"])
def test_viterbi_matches_exhaustive_enumeration(text):
    g = parse_grammar_file(ARITH)
    probs = enumerate_tree_probs(g, text)
    assert 0 < len(probs) <= 200
    tree = parse(g, text)
    assert math.isclose(tree.log_prob, math.log(max(probs)), abs_tol=1e-9)
    assert math.isclose(tree.log_prob, tree_log_prob(g, tree), abs_tol=1e-9)


@pytest.mark.parametrize("text", ["(((())))", "0(1(2((44))))", "00(((4(4))))", "(1(2(3(444))))"])
def test_viterbi_matches_enumeration_with_empty_productions(text):
    g = parse_grammar_file(PAREN_GRAMMAR)
    probs = enumerate_tree_probs(g, text)
    tree = parse(g, text)
    if not probs:
        assert not tree
        return
    assert math.isclose(tree.log_prob, math.log(max(probs)), abs_tol=1e-9)


def test_first_mode_returns_a_valid_tree():
    g = parse_grammar_file(ARITH)
    tree = parse(g, "1+2+1", mode="first")
    assert tree and check_spans(tree)
    assert tree.log_prob == 0.0


def test_ambiguity_tie_breaks_deterministically():
    g = parse_grammar_file(ARITH)
    a = parse(g, "1+2+1")
    b = parse(g, "1+2+1")
    assert [n.span for n in a.nodes()] == [n.span for n in b.nodes()]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_sampler_parser_agreement_property(seed):
    g = parse_grammar_file(ARITH)
    s = sample(g, seed, 25)
    probs = enumerate_tree_probs(g, s) if len(s) <= 9 else None
    tree = parse(g, s)
    assert tree and check_spans(tree)
    if probs:
        assert math.isclose(tree.log_prob, math.log(max(probs)), abs_tol=1e-9)


@settings(max_examples=80, deadline=None)
@given(st.text("()1+2", min_size=1, max_size=9))
def test_parse_succeeds_iff_some_tree_exists(text):
    g = parse_grammar_file(ARITH)
    assert bool(parse(g, text)) == bool(enumerate_tree_probs(g, text))


def test_grammar_text_round_trip():
    g = parse_grammar_file(ARITH)
    g2 = parse_grammar_file(g.to_text())
    assert [(p.lhs, p.rhs, p.prob, p.label) for p in g.productions] == \
        [(p.lhs, p.rhs, p.prob, p.label) for p in g2.productions]
