import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dni.core import SymbolDataset, UnitGroup
from dni.engine import EngineConfig, plan, run
from dni.extract import Extractor, ModelSpec
from dni.hypothesis import HypothesisEvaluator, HypothesisSpec
from dni.inspectql import (EPOCH_QUERY, Catalog, ColumnRef, Comparison, FromItem, InspectClause, Literal,
                           QueryAst, QueryError, Table, execute, format_query, load_catalog, parse_query,
                           run_query, seeded_catalog, write_catalog)
from dni.measures import MeasureSpec


@pytest.fixture(scope="module")
def catalog():
    return seeded_catalog(0, n_records=300)


def test_epoch_query_parses():
    ast = parse_query(EPOCH_QUERY)
    assert ast.group_by == (ColumnRef("M", "epoch"),)
    assert ast.having == (Comparison(ColumnRef("S", "unit_score"), ">", Literal(0.8)),)
    assert ast.inspect.measures == ("corr",)
    assert ast.inspect.over == ColumnRef("D", "seq") and ast.inspect.alias == "S"
    assert [f.alias for f in ast.from_] == ["M", "U", "H", "D"]


def test_missing_over_is_syntax_error():
    with pytest.raises(QueryError, match="OVER") as exc:
        parse_query("SELECT S.uid INSPECT U.uid AND H.h USING corr AS S FROM units U, hypotheses H")
    assert "line 1" in str(exc.value)


def test_error_positions_carry_line_and_column():
    with pytest.raises(QueryError) as exc:
        parse_query("SELECT S.uid\nINSPECT U.uid AND H.h USING corr OVER D.seq AS S\nFROM units U WHERE ==")
    assert exc.value.line == 3 and exc.value.col == 20


def test_two_measures():
    ast = parse_query("SELECT S.uid INSPECT U.uid, H.h USING corr, logreg OVER D.seq AS S "
                      "FROM units U, hypotheses H, inputs D")
    assert ast.inspect.measures == ("corr", "logreg")


def test_unknown_measure():
    with pytest.raises(QueryError, match="unknown measure"):
        parse_query("SELECT S.uid INSPECT U.uid, H.h USING nope OVER D.seq AS S FROM units U")


def test_alias_misuse():
    with pytest.raises(QueryError, match="only be referenced"):
        parse_query("SELECT S.uid INSPECT U.uid, H.h OVER D.seq AS S FROM units U, inputs D "
                    "WHERE S.unit_score > 1")
    with pytest.raises(QueryError, match="not a column"):
        parse_query("SELECT S.bogus INSPECT U.uid, H.h OVER D.seq AS S FROM units U, inputs D")
    with pytest.raises(QueryError, match="collides"):
        parse_query("SELECT S.uid INSPECT U.uid, H.h OVER D.seq AS S FROM units S, inputs D")


def test_format_round_trip_epoch_query():
    ast = parse_query(EPOCH_QUERY)
    assert parse_query(format_query(ast)) == ast


idents = st.sampled_from(["uid", "mid", "layer", "epoch", "h", "name", "seq", "x_1"])
quals = st.sampled_from(["U", "M", "H", "D"])
cols = st.builds(ColumnRef, quals, idents)
lits = st.one_of(st.integers(-1000, 1000).map(Literal), st.floats(-1e3, 1e3, allow_nan=False).map(Literal),
                 st.text("ab' c", max_size=5).map(Literal))
comparisons = st.builds(Comparison, st.one_of(cols, lits), st.sampled_from(["=", "!=", "<", ">", "<=", ">="]),
                        st.one_of(cols, lits))
inspect_cols = st.builds(ColumnRef, st.just("S"), st.sampled_from(["uid", "hid", "unit_score", "group_score"]))


@settings(max_examples=150, deadline=None)
@given(st.lists(st.one_of(cols, inspect_cols), min_size=1, max_size=3),
       st.lists(st.sampled_from(["corr", "logreg", "mi", "jaccard"]), min_size=1, max_size=3, unique=True),
       st.lists(comparisons, max_size=3), st.lists(cols, max_size=2),
       st.lists(st.builds(Comparison, inspect_cols, st.sampled_from(["<", ">"]), lits), max_size=2))
def test_parse_print_parse_round_trip(select, measures, where, group, having):
    ast = QueryAst(tuple(select), InspectClause(ColumnRef("U", "uid"), ColumnRef("H", "h"), tuple(measures),
                                                ColumnRef("D", "seq"), "S"),
                   (FromItem("units", "U"), FromItem("models", "M"), FromItem("hypotheses", "H"),
                    FromItem("inputs", "D")), tuple(where), tuple(group), tuple(having))
    assert parse_query(format_query(ast)) == ast


def test_epoch_query_on_seeded_catalog(catalog):
    res = run_query(EPOCH_QUERY, catalog)
    S = set(catalog.model_specs["sqlparser@0"].S)
    assert res.columns == ("M.epoch", "S.uid")
    assert res.rows, "expected some units above 0.8"
    assert {uid for _, uid in res.rows} <= S
    assert {e for e, _ in res.rows} <= {1, 2}
    assert all(r["unit_score"] > 0.8 for r in res.inspect_rows)


def test_where_pushdown_extracts_layer0_only(catalog):
    run_query(EPOCH_QUERY, catalog)
    for key in ("sqlparser@0", "sqlparser@1", "sqlparser@2"):
        assert catalog.extractors[key].extracted_units <= set(range(16))
    assert "charrnn" not in catalog.extractors


def test_group_by_epoch_forms_three_groups(catalog):
    res = run_query(EPOCH_QUERY, catalog)
    assert len(res.groups) == 3
    assert len({g.model_id for g in res.groups}) == 3
    assert all(g.unit_ids == tuple(range(16)) for g in res.groups)


def test_having_matches_direct_engine_filter(catalog):
    res = run_query(EPOCH_QUERY.replace("> 0.8", "> 0.5"), catalog)
    seqs = [r[0] for r in catalog.relations["inputs"].rows]
    ds = SymbolDataset.from_lines(seqs, catalog.n_s, alphabet=list(catalog.alphabet))
    hyp = catalog.hypothesis_specs["kw"]
    ev = HypothesisEvaluator([hyp])
    expected = []
    for epoch in range(3):
        key = f"sqlparser@{epoch}"
        ex = Extractor(catalog.model_specs[key], ds.alphabet, ds.pad, HypothesisEvaluator([hyp]))
        p = plan([UnitGroup(key, tuple(range(16)))], [hyp], [MeasureSpec("corr", "pearson")],
                 extractors={key: ex}, evaluator=ev)
        for r in run(p, ds, EngineConfig()).results:
            if r.unit_score > 0.5:
                expected.append((epoch, r.unit_id))
    assert sorted(res.rows) == sorted(expected)


def test_select_must_be_group_key_or_inspect_column(catalog):
    with pytest.raises(QueryError, match="GROUP BY key"):
        run_query(EPOCH_QUERY.replace("SELECT M.epoch", "SELECT U.layer"), catalog)


def test_empty_unit_selection(catalog):
    with pytest.raises(QueryError, match="select no units"):
        run_query(EPOCH_QUERY.replace("U.layer = 0", "U.layer = 7"), catalog)


def test_unknown_relation(catalog):
    with pytest.raises(QueryError, match="unknown relation"):
        run_query(EPOCH_QUERY.replace("inputs D", "nothing D"), catalog)


def test_referential_integrity():
    rels = {"models": Table("models", ("mid",), [("a",)]), "units": Table("units", ("uid", "mid"), [(0, "b")]),
            "hypotheses": Table("hypotheses", ("h",), []), "inputs": Table("inputs", ("seq",), [])}
    with pytest.raises(QueryError, match="unknown model"):
        Catalog(rels, {}, {}, 4)


def test_catalog_csv_round_trip(tmp_path, catalog):
    write_catalog(catalog, tmp_path)
    back = load_catalog(tmp_path, catalog.n_s)
    assert back.model_specs == catalog.model_specs
    assert back.alphabet == catalog.alphabet
    assert set(back.hypothesis_specs) == set(catalog.hypothesis_specs)
    a = run_query(EPOCH_QUERY, seeded_catalog(0, n_records=300))
    b = run_query(EPOCH_QUERY, back)
    assert a.rows == b.rows


def _random_catalog(rng):
    n_models = int(rng.integers(1, 3))
    models = [(f"m{i}", int(rng.integers(0, 3))) for i in range(n_models)]
    units = [(u, mid, int(rng.integers(0, 2))) for mid, _ in models for u in range(int(rng.integers(2, 6)))]
    specs = {mid: ModelSpec(mid, "synthetic-rnn", 6, seed=int(rng.integers(100))) for mid, _ in models}
    hyps = {"ha": HypothesisSpec("ha", "keyword", {"keyword": "a"}),
            "hb": HypothesisSpec("hb", "keyword", {"keyword": "b"})}
    seqs = ["".join(rng.choice(list("abc"), size=int(rng.integers(2, 7)))) for _ in range(40)]
    rels = {"models": Table("models", ("mid", "epoch"), models),
            "units": Table("units", ("uid", "mid", "layer"), units),
            "hypotheses": Table("hypotheses", ("h", "name"), [("ha", "A"), ("hb", "B")]),
            "inputs": Table("inputs", ("seq",), [(s,) for s in seqs])}
    return Catalog(rels, specs, hyps, 6, alphabet=("~", "a", "b", "c"))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 1), st.sampled_from(["A", "B"]))
def test_query_equals_direct_engine_call(seed, layer, name):
    rng = np.random.default_rng(seed)
    cat = _random_catalog(rng)
    q = ("SELECT S.mid, S.uid, S.unit_score INSPECT U.uid AND H.h USING corr OVER D.seq AS S "
         "FROM models M, units U, hypotheses H, inputs D "
         f"WHERE M.mid = U.mid AND U.layer = {layer} AND H.name = '{name}'")
    units = [(u, m) for u, m, l in cat.relations["units"].rows if l == layer]
    if not units:
        with pytest.raises(QueryError):
            run_query(q, cat)
        return
    res = run_query(q, cat)
    hid = "ha" if name == "A" else "hb"
    ds = SymbolDataset.from_lines([r[0] for r in cat.relations["inputs"].rows], 6, alphabet=list(cat.alphabet))
    expected = []
    for mid in sorted({m for _, m in units}):
        ex = Extractor(cat.model_specs[mid], ds.alphabet)
        g = UnitGroup(mid, tuple(sorted(u for u, m in units if m == mid)))
        p = plan([g], [cat.hypothesis_specs[hid]], [MeasureSpec("corr", "pearson")], extractors={mid: ex})
        expected += [(mid, r.unit_id, r.unit_score) for r in run(p, ds, EngineConfig()).results]
    assert sorted(res.rows) == sorted(expected)
