import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dni.core import BehaviorBlock, SymbolDataset, block_iterator, write_behavior_file
from dni.grammar import parse, parse_grammar_file
from dni.hypothesis import (BehaviorCache, CompiledHypothesis, Fsm, FsmError, HypothesisError,
                            HypothesisEvaluator, HypothesisSpec, evaluate_hypotheses, fsm_hypothesis,
                            grammar_hypotheses, keyword_hypothesis, load_manifest, read_fsm_table,
                            symbol_class_fsm, tree_hypothesis)

ARITH = """E -> ( E ) [0.2] @paren | E + E [0.2] | T [0.6]
T -> 1 [0.5] | 2 [0.5]"""


def bits(v):
    return "".join(str(int(x)) for x in v)


def brute_keyword(text, kw):
    out = [0] * len(text)
    for i in range(len(text) - len(kw) + 1):
        if text[i:i + len(kw)] == kw:
            for j in range(i, i + len(kw)):
                out[j] = 1
    return out


def parity_fsm():
    trans = {("even", "0"): "even", ("even", "1"): "odd", ("odd", "0"): "odd", ("odd", "1"): "even"}
    return Fsm(("even", "odd"), ("0", "1"), trans, "even", {"even": 0.0, "odd": 1.0})


def test_keyword_select_example():
    assert bits(keyword_hypothesis("SELECT")("SELECT 1 FROM a")) == "111111000000000"


def test_keyword_absent_all_zero():
    assert not keyword_hypothesis("WHERE")("SELECT 1 FROM a").any()


def test_keyword_overlap_union():
    assert bits(keyword_hypothesis("aa")("aaa")) == "111"


def test_keyword_pad_positions_zero():
    assert bits(keyword_hypothesis("~")("ab~~")) == "0000"


def test_keyword_empty_rejected():
    with pytest.raises(HypothesisError):
        keyword_hypothesis("")


@settings(max_examples=100, deadline=None)
@given(st.text("ab", min_size=0, max_size=12), st.text("ab", min_size=1, max_size=3))
def test_keyword_matches_brute_force(text, kw):
    assert keyword_hypothesis(kw)(text).tolist() == brute_keyword(text, kw)


def test_tree_examples_on_nested_parens():
    g = parse_grammar_file(ARITH)
    tree = parse(g, "((1+2))")
    assert bits(tree_hypothesis("paren", "time", nesting=0, grammar=g)(tree, 7)) == "1111111"
    assert bits(tree_hypothesis("paren", "signal", nesting=0, grammar=g)(tree, 7)) == "1000001"
    assert bits(tree_hypothesis("paren", "depth", grammar=g)(tree, 7)) == "1222221"


def test_tree_signal_without_nesting_marks_every_boundary():
    g = parse_grammar_file(ARITH)
    tree = parse(g, "((1+2))")
    assert bits(tree_hypothesis("paren", "signal", grammar=g)(tree, 7)) == "1100011"


def test_tree_hypothesis_matches_nonterminal_name():
    g = parse_grammar_file(ARITH)
    tree = parse(g, "1+2")
    assert bits(tree_hypothesis("T", "time", grammar=g)(tree, 3)) == "101"


def test_tree_parse_failure_is_zero():
    g = parse_grammar_file(ARITH)
    fail = parse(g, "((")
    assert not tree_hypothesis("paren", "time", grammar=g)(fail, 2).any()


def test_tree_unknown_node_type():
    g = parse_grammar_file(ARITH)
    with pytest.raises(HypothesisError):
        tree_hypothesis("nope", "time", grammar=g)


def span_oracle(tree, label, length, mode):
    """Recompute covers from the list of matching spans."""
    spans = [n.span for n in tree.nodes() if not n.is_leaf and (n.label == label or n.lhs == label)]
    out = [0] * length
    for lo, hi in spans:
        if hi <= lo:
            continue
        if mode == "time":
            for i in range(lo, hi):
                out[i] = 1
        elif mode == "signal":
            out[lo] = out[hi - 1] = 1
        else:
            for i in range(lo, hi):
                out[i] += 1
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 5000), st.sampled_from(["time", "signal", "depth"]))
def test_tree_hypothesis_matches_span_oracle(seed, mode):
    from dni.grammar import sample
    g = parse_grammar_file(ARITH)
    text = sample(g, seed, 20)
    tree = parse(g, text)
    got = tree_hypothesis("paren", mode, grammar=g)(tree, len(text)).tolist()
    assert got == span_oracle(tree, "paren", len(text), mode)


def test_parity_fsm_example():
    assert fsm_hypothesis(parity_fsm())("1101").tolist() == [1, 0, 0, 1]


def test_fsm_state_indicator():
    assert fsm_hypothesis(parity_fsm(), "even")("1101").tolist() == [0, 1, 1, 0]


def test_fsm_symbol_outside_alphabet():
    with pytest.raises(FsmError):
        fsm_hypothesis(parity_fsm())("12")


def test_fsm_pad_positions_zero():
    assert fsm_hypothesis(parity_fsm())("11~~").tolist() == [1, 0, 0, 0]


def test_fsm_must_be_total():
    with pytest.raises(FsmError):
        Fsm(("a",), ("x", "y"), {("a", "x"): "a"}, "a", {"a": 0.0})


def test_fsm_table_round_trip(tmp_path):
    text = "even\t0\teven\t0\neven\t1\todd\t0\nodd\t0\todd\t1\nodd\t1\teven\t1\n"
    fsm = read_fsm_table(text)
    assert fsm.initial == "even"
    assert fsm_hypothesis(fsm)("1101").tolist() == [1, 0, 0, 1]
    with pytest.raises(FsmError):
        read_fsm_table("a\tx\ta\t0\na\tx\tb\t0\n")


@settings(max_examples=80, deadline=None)
@given(st.text("01", max_size=15))
def test_parity_fsm_matches_direct_simulation(s):
    expected, ones = [], 0
    for c in s:
        ones += c == "1"
        expected.append(ones % 2)
    assert fsm_hypothesis(parity_fsm())(s).tolist() == expected


def test_symbol_class_fsm():
    fsm = symbol_class_fsm(["~", "(", ")", "1"], "()")
    assert fsm_hypothesis(fsm)("(1)").tolist() == [1, 0, 1]


def test_grammar_hypotheses_two_per_nonterminal():
    g = parse_grammar_file(ARITH)
    ids = [s.hyp_id for s in grammar_hypotheses(g)]
    assert ids == ["E:time", "E:signal", "T:time", "T:signal"]


def test_spec_validation():
    with pytest.raises(HypothesisError):
        HypothesisSpec("x", "bogus")
    with pytest.raises(HypothesisError):
        HypothesisSpec("x", "keyword", {"keyword": "a"}, "complex")


def _sql_like_dataset():
    g = parse_grammar_file(ARITH)
    from dni.grammar import sample_many
    lines = sample_many(g, 40, 1, 10) + ["((", "1+"]
    return g, SymbolDataset.from_lines(lines, 10)


def _tree_specs():
    return [HypothesisSpec("p:time", "tree-time", {"node_type": "paren"}),
            HypothesisSpec("p:depth", "tree-depth", {"node_type": "paren"}, "integer"),
            HypothesisSpec("kw", "keyword", {"keyword": "+"})]


def test_two_tree_hypotheses_one_parse_per_record():
    g, ds = _sql_like_dataset()
    ev = HypothesisEvaluator(_tree_specs(), g)
    blk = next(block_iterator(ds, 64, seed=0))
    out = ev.evaluate(ds, blk)
    assert ev.parser.n_parses == ds.n_d
    assert out.column_ids == ("p:time", "p:depth", "kw")
    assert out.values.shape == (ds.n_d * ds.n_s, 3)
    assert out.valid.sum() == ds.n_d - 2


def test_cache_hit_does_not_parse():
    g, ds = _sql_like_dataset()
    cache = BehaviorCache()
    ev = HypothesisEvaluator(_tree_specs(), g, cache)
    blk = next(block_iterator(ds, 64, seed=0))
    a = ev.evaluate(ds, blk)
    n = ev.parser.n_parses
    b = ev.evaluate(ds, blk)
    assert ev.parser.n_parses == n
    assert cache.hits == 3
    assert np.array_equal(a.values, b.values) and np.array_equal(a.valid, b.valid)


def test_cache_lru_eviction_alternating_blocks():
    g, ds = _sql_like_dataset()
    one_block = 21 * ds.n_s * 4 + 21
    cache = BehaviorCache(capacity_bytes=one_block)
    ev = HypothesisEvaluator([HypothesisSpec("kw", "keyword", {"keyword": "+"})], g, cache)
    b0, b1 = list(block_iterator(ds, 21, seed=0))
    for blk in (b0, b1, b0, b1):
        ev.evaluate(ds, blk)
    assert cache.evictions >= 3
    assert cache.hits == 0 and cache.misses == 4


def test_cache_transparency():
    g, ds = _sql_like_dataset()
    blocks = list(block_iterator(ds, 16, seed=2))
    plain = HypothesisEvaluator(_tree_specs(), g)
    cached = HypothesisEvaluator(_tree_specs(), g, BehaviorCache())
    for blk in blocks + blocks:
        a, b = plain.evaluate(ds, blk), cached.evaluate(ds, blk)
        assert a.values.tobytes() == b.values.tobytes()
        assert np.array_equal(a.valid, b.valid)


def test_disk_cache_survives_new_process_object(tmp_path):
    g, ds = _sql_like_dataset()
    blk = next(block_iterator(ds, 64, seed=0))
    first = HypothesisEvaluator(_tree_specs(), g, BehaviorCache(directory=tmp_path))
    a = first.evaluate(ds, blk)
    cache = BehaviorCache(directory=tmp_path)
    second = HypothesisEvaluator(_tree_specs(), g, cache)
    b = second.evaluate(ds, blk)
    assert second.parser.n_parses == 0 and cache.disk_hits == 3
    assert a.values.tobytes() == b.values.tobytes() and np.array_equal(a.valid, b.valid)
    assert cache.clear(disk=True) == 3


def test_errors_carry_hyp_id():
    spec = HypothesisSpec("par", "fsm", {"fsm": parity_fsm()})
    ok = SymbolDataset.from_lines(["11"], 2)
    assert evaluate_hypotheses([spec], ok, next(block_iterator(ok, 4))).values[:, 0].tolist() == [1, 0]
    bad = SymbolDataset.from_lines(["13"], 2)
    with pytest.raises(HypothesisError) as exc:
        evaluate_hypotheses([spec], bad, next(block_iterator(bad, 4)))
    assert exc.value.hyp_id == "par"


def test_binary_output_checked():
    ds = SymbolDataset.from_lines(["1+1"], 3)
    fsm = Fsm(("a",), ds.alphabet, {("a", s): "a" for s in ds.alphabet}, "a", {"a": 2.0})
    spec = HypothesisSpec("two", "fsm", {"fsm": fsm}, "binary")
    with pytest.raises(HypothesisError, match="binary"):
        evaluate_hypotheses([spec], ds, next(block_iterator(ds, 4)))


def test_external_file_hypothesis(tmp_path):
    ds = SymbolDataset.from_lines(["ab", "ba", "aa"], 2)
    vals = np.arange(6, dtype=np.float32)[:, None]
    write_behavior_file([BehaviorBlock(("h",), (0, 3), vals, 2)], tmp_path / "h.dnib")
    spec = HypothesisSpec("h", "external-file", {"path": str(tmp_path / "h.dnib")}, "real")
    blk = next(block_iterator(ds, 3, seed=4))
    out = evaluate_hypotheses([spec], ds, blk)
    expected = np.concatenate([vals[i * 2:(i + 1) * 2, 0] for i in blk.indices])
    assert np.array_equal(out.values[:, 0], expected)
    fn = CompiledHypothesis(spec, None, "~")
    with pytest.raises(HypothesisError):
        fn("ab", None, 7)


def test_manifest_expands_grammar_rules(tmp_path):
    g = parse_grammar_file(ARITH)
    (tmp_path / "par.tsv").write_text("even\t0\teven\t0\neven\t1\todd\t0\nodd\t0\todd\t1\nodd\t1\teven\t1\n")
    (tmp_path / "m.json").write_text(json.dumps([
        {"kind": "grammar-rules"},
        {"hyp_id": "plus", "kind": "keyword", "params": {"keyword": "+"}},
        {"hyp_id": "par", "kind": "fsm", "params": {"table": "par.tsv"}}]))
    specs = load_manifest(tmp_path / "m.json", g)
    assert [s.hyp_id for s in specs] == ["E:time", "E:signal", "T:time", "T:signal", "plus", "par"]
    assert CompiledHypothesis(specs[-1], g, "~")("1101").tolist() == [1, 0, 0, 1]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.text("()1+2", min_size=1, max_size=8), min_size=1, max_size=12), st.integers(1, 6))
def test_outputs_have_n_s_values_and_are_binary(lines, n_b):
    g = parse_grammar_file(ARITH)
    ds = SymbolDataset.from_lines(lines, 8, alphabet=["~", "(", ")", "+", "1", "2"])
    ev = HypothesisEvaluator(_tree_specs(), g)
    for blk in block_iterator(ds, n_b, seed=0):
        out = ev.evaluate(ds, blk)
        assert out.values.shape == (blk.n_records * 8, 3)
        assert np.isfinite(out.values).all()
        assert np.isin(out.values[:, [0, 2]], (0.0, 1.0)).all()
        pads = (blk.symbols == 0).reshape(-1)
        assert not out.values[pads].any()
