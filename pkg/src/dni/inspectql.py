"""A small SQL-like dialect with an INSPECT clause, executed over an in-memory catalog.

    SELECT M.epoch, S.uid
    INSPECT U.uid AND H.h USING corr OVER D.seq AS S
    FROM models M, units U, hypotheses H, inputs D
    WHERE M.mid = U.mid AND U.layer = 0 AND H.name = 'keywords'
    GROUP BY M.epoch
    HAVING S.unit_score > 0.8
"""

from __future__ import annotations

import csv
import json
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .core import DEFAULT_PAD, SymbolDataset, UnitGroup
from .extract import Extractor, ModelSpec
from .hypothesis import HypothesisEvaluator, HypothesisSpec

MEASURE_ALIASES = {"corr": "pearson", "pearson": "pearson", "logreg": "logreg", "mi": "mutual-info",
                   "jaccard": "jaccard", "iou": "jaccard", "diffmeans": "diff-means"}
INSPECT_COLUMNS = ("uid", "hid", "mid", "group_score", "unit_score")
KEYWORDS = {"SELECT", "INSPECT", "AND", "USING", "OVER", "AS", "FROM", "WHERE", "GROUP", "BY", "HAVING"}
OPS = {"=": operator.eq, "!=": operator.ne, "<>": operator.ne, "<": operator.lt,
       "<=": operator.le, ">": operator.gt, ">=": operator.ge}


class QueryError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line, self.col = line, col
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ColumnRef:
    qualifier: str | None
    name: str

    def __str__(self):
        return f"{self.qualifier}.{self.name}" if self.qualifier else self.name


@dataclass(frozen=True)
class Literal:
    value: Any

    def __str__(self):
        if isinstance(self.value, str):
            return "'" + self.value.replace("'", "''") + "'"
        return repr(self.value)


@dataclass(frozen=True)
class Comparison:
    left: ColumnRef | Literal
    op: str
    right: ColumnRef | Literal

    def __str__(self):
        return f"{self.left} {self.op} {self.right}"


@dataclass(frozen=True)
class InspectClause:
    unit: ColumnRef
    hypothesis: ColumnRef
    measures: tuple[str, ...]
    over: ColumnRef
    alias: str


@dataclass(frozen=True)
class FromItem:
    relation: str
    alias: str


@dataclass(frozen=True)
class QueryAst:
    select: tuple[ColumnRef, ...]
    inspect: InspectClause
    from_: tuple[FromItem, ...]
    where: tuple[Comparison, ...] = ()
    group_by: tuple[ColumnRef, ...] = ()
    having: tuple[Comparison, ...] = ()


_TOKEN = re.compile(r"""(?P<ws>\s+)|(?P<str>'(?:[^']|'')*')|(?P<num>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
    |(?P<op><=|>=|<>|!=|=|<|>)|(?P<punct>[.,*])|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)""", re.X)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise QueryError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        s = m.group()
        if kind != "ws":
            if kind == "ident" and s.upper() in KEYWORDS:
                kind, s = "kw", s.upper()
            toks.append(_Tok(kind, s, line, pos - line_start + 1))
        for i, ch in enumerate(s):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise QueryError(msg, tok.line, tok.col)

    def accept(self, kind: str, text: str | None = None):
        t = self.tok
        if t.kind == kind and (text is None or t.text == text):
            self.i += 1
            return t
        return None

    def expect(self, kind: str, text: str | None = None, what: str | None = None):
        t = self.accept(kind, text)
        if t is None:
            found = self.tok.text or "end of query"
            self.error(f"expected {what or text or kind}, found {found!r}")
        return t

    def ident(self) -> str:
        return self.expect("ident", what="identifier").text

    def column(self) -> ColumnRef:
        first = self.ident()
        if self.accept("punct", "."):
            return ColumnRef(first, self.ident())
        return ColumnRef(None, first)

    def operand(self):
        t = self.tok
        if self.accept("str"):
            return Literal(t.text[1:-1].replace("''", "'"))
        if self.accept("num"):
            return Literal(float(t.text) if any(c in t.text for c in ".eE") else int(t.text))
        return self.column()

    def comparison(self) -> Comparison:
        left = self.operand()
        op = self.expect("op", what="comparison operator").text
        return Comparison(left, op, self.operand())

    def conjunction(self) -> tuple[Comparison, ...]:
        preds = [self.comparison()]
        while self.accept("kw", "AND"):
            preds.append(self.comparison())
        return tuple(preds)

    def parse(self) -> QueryAst:
        self.expect("kw", "SELECT")
        select = [self.column()]
        while self.accept("punct", ","):
            select.append(self.column())
        inspect = self.inspect()
        self.expect("kw", "FROM")
        from_ = [self.from_item()]
        while self.accept("punct", ","):
            from_.append(self.from_item())
        where = group = having = ()
        if self.accept("kw", "WHERE"):
            where = self.conjunction()
        if self.accept("kw", "GROUP"):
            self.expect("kw", "BY")
            keys = [self.column()]
            while self.accept("punct", ","):
                keys.append(self.column())
            group = tuple(keys)
        if self.accept("kw", "HAVING"):
            having = self.conjunction()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        ast = QueryAst(tuple(select), inspect, tuple(from_), where, group, having)
        _check_alias_use(ast, self)
        return ast

    def inspect(self) -> InspectClause:
        self.expect("kw", "INSPECT")
        unit = self.column()
        if not (self.accept("punct", ",") or self.accept("kw", "AND")):
            self.error("expected ',' or AND between unit and hypothesis")
        hyp = self.column()
        measures = []
        if self.accept("kw", "USING"):
            while True:
                t = self.expect("ident", what="measure name")
                if t.text.lower() not in MEASURE_ALIASES:
                    self.error(f"unknown measure {t.text!r}", t)
                measures.append(t.text.lower())
                if not self.accept("punct", ","):
                    break
        if self.tok.kind != "kw" or self.tok.text != "OVER":
            self.error("INSPECT requires an OVER clause")
        self.i += 1
        over = self.column()
        alias = "S"
        if self.accept("kw", "AS"):
            alias = self.ident()
        return InspectClause(unit, hyp, tuple(measures or ["corr"]), over, alias)

    def from_item(self) -> FromItem:
        rel = self.ident()
        self.accept("kw", "AS")
        alias = self.accept("ident")
        return FromItem(rel, alias.text if alias else rel)


def _refs(preds):
    for p in preds:
        for side in (p.left, p.right):
            if isinstance(side, ColumnRef):
                yield side


def _check_alias_use(ast: QueryAst, parser: _Parser):
    alias = ast.inspect.alias
    aliases = [f.alias for f in ast.from_]
    if alias in aliases:
        raise QueryError(f"INSPECT alias {alias!r} collides with a FROM alias")
    if len(set(aliases)) != len(aliases):
        raise QueryError("duplicate FROM alias")
    for ref in list(_refs(ast.where)) + list(ast.group_by) + [ast.inspect.unit, ast.inspect.hypothesis,
                                                               ast.inspect.over]:
        if ref.qualifier == alias:
            raise QueryError(f"INSPECT alias {alias!r} may only be referenced in SELECT or HAVING")
    for ref in list(ast.select) + list(_refs(ast.having)):
        if ref.qualifier == alias and ref.name not in INSPECT_COLUMNS:
            raise QueryError(f"{ref} is not a column of the INSPECT relation {INSPECT_COLUMNS}")


def parse_query(text: str) -> QueryAst:
    return _Parser(text).parse()


def format_query(ast: QueryAst) -> str:
    ins = ast.inspect
    lines = ["SELECT " + ", ".join(map(str, ast.select)),
             f"INSPECT {ins.unit} AND {ins.hypothesis} USING {', '.join(ins.measures)} OVER {ins.over} AS {ins.alias}",
             "FROM " + ", ".join(f"{f.relation} {f.alias}" for f in ast.from_)]
    if ast.where:
        lines.append("WHERE " + " AND ".join(map(str, ast.where)))
    if ast.group_by:
        lines.append("GROUP BY " + ", ".join(map(str, ast.group_by)))
    if ast.having:
        lines.append("HAVING " + " AND ".join(map(str, ast.having)))
    return "\n".join(lines)


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple]

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]


@dataclass
class Catalog:
    """Relations plus the recipes they refer to.

    ``models`` rows may carry a ``model_key`` column naming an entry of
    ``model_specs``; otherwise ``mid`` is the key. ``hypotheses.h`` keys
    ``hypothesis_specs``.
    """
    relations: dict[str, Table]
    model_specs: dict[str, ModelSpec]
    hypothesis_specs: dict[str, HypothesisSpec]
    n_s: int
    pad: str = DEFAULT_PAD
    grammar: Any = None
    alphabet: tuple[str, ...] | None = None
    extractors: dict[str, Extractor] = field(default_factory=dict)

    def __post_init__(self):
        for rel in ("models", "units", "hypotheses", "inputs"):
            if rel not in self.relations:
                raise QueryError(f"catalog lacks relation {rel!r}")
        mids = set(self.relations["models"].column("mid"))
        bad = set(self.relations["units"].column("mid")) - mids
        if bad:
            raise QueryError(f"units reference unknown model ids {sorted(bad)}")

    def model_key(self, model_row: dict) -> str:
        return str(model_row.get("model_key") or model_row["mid"])

    def extractor(self, key: str, dataset: SymbolDataset, evaluator: HypothesisEvaluator) -> Extractor:
        ex = self.extractors.get(key)
        if ex is None or ex.alphabet != dataset.alphabet:
            if key not in self.model_specs:
                raise QueryError(f"no extractor binding for model {key!r}")
            ex = Extractor(self.model_specs[key], dataset.alphabet, dataset.pad, evaluator)
            self.extractors[key] = ex
        return ex


def _typed(values: list[str]) -> list:
    """Convert a column to int or float only if every value round-trips exactly."""
    for conv in (int, float):
        try:
            out = [conv(v) for v in values]
        except ValueError:
            continue
        if all(str(o) == v for o, v in zip(out, values)):
            return out
    return values


def _field(row: dict, name: str, conv, default):
    v = row.get(name, "")
    return default if v == "" or v is None else conv(v)


def read_table(path: str | Path, name: str | None = None) -> Table:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise QueryError(f"empty relation file {path}")
    cols = tuple(rows[0])
    data = rows[1:]
    typed = [_typed([r[j] for r in data]) for j in range(len(cols))]
    return Table(name or Path(path).stem, cols, [tuple(c[i] for c in typed) for i in range(len(data))])


def load_catalog(directory: str | Path, n_s: int, pad: str = DEFAULT_PAD, grammar=None) -> Catalog:
    """Read ``models.csv``, ``units.csv``, ``hypotheses.csv`` and ``inputs.csv``.

    Model recipes come from optional models columns ``kind, n_units, seed,
    path, S (space separated), w, target_hyp, sigma``; hypothesis recipes from
    ``kind, params (JSON), output_kind``.
    """
    d = Path(directory)
    rels = {p.stem: read_table(p) for p in sorted(d.glob("*.csv"))}
    models = {}
    if "models" in rels:
        for row in rels["models"].records():
            if "kind" not in row:
                continue
            key = str(row.get("model_key") or row["mid"])
            S = tuple(int(s) for s in str(row.get("S", "") or "").split())
            path = row.get("path") or None
            if path and not Path(path).is_absolute():
                path = str(d / path)
            models[key] = ModelSpec(key, row["kind"], int(row["n_units"]), _field(row, "seed", int, 0),
                                    path, S, _field(row, "w", float, 0.5), row.get("target_hyp") or None,
                                    _field(row, "sigma", float, 0.05))
    hyps = {}
    if "hypotheses" in rels:
        for row in rels["hypotheses"].records():
            if "kind" in row:
                params = json.loads(row.get("params") or "{}")
                hyps[str(row["h"])] = HypothesisSpec(str(row["h"]), row["kind"], params,
                                                     row.get("output_kind") or "binary")
    alphabet = None
    if (d / "alphabet.txt").exists():
        alphabet = tuple(line for line in (d / "alphabet.txt").read_text(encoding="utf-8").split("\n") if line)
    return Catalog(rels, models, hyps, n_s, pad, grammar, alphabet)


MODEL_RECIPE_COLUMNS = ("kind", "n_units", "seed", "path", "S", "w", "target_hyp", "sigma")
HYPOTHESIS_RECIPE_COLUMNS = ("kind", "params", "output_kind")


def _with_recipes(table: Table, key_of, recipe_cols, recipe_of) -> Table:
    extra = tuple(c for c in recipe_cols if c not in table.columns)
    rows = []
    for rec in table.records():
        recipe = recipe_of(key_of(rec))
        rows.append(tuple(rec.values()) + tuple(recipe.get(c, "") for c in extra))
    return Table(table.name, table.columns + extra, rows)


def write_catalog(catalog: Catalog, directory: str | Path) -> None:
    """Write every relation as CSV, with model and hypothesis recipes as extra columns.

    The alphabet, when pinned, goes to ``alphabet.txt`` (one symbol per line, pad first).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)

    def model_recipe(key):
        m = catalog.model_specs.get(key)
        if m is None:
            return {}
        return {"kind": m.kind, "n_units": m.n_units, "seed": m.seed, "path": m.path or "",
                "S": " ".join(map(str, m.S)), "w": m.w, "target_hyp": m.target_hyp or "", "sigma": m.sigma}

    def hyp_recipe(key):
        h = catalog.hypothesis_specs.get(key)
        if h is None:
            return {}
        try:
            params = json.dumps(dict(h.params))
        except TypeError:
            raise QueryError(f"hypothesis {key!r} has parameters that cannot be written as JSON") from None
        return {"kind": h.kind, "params": params, "output_kind": h.output_kind}

    rels = dict(catalog.relations)
    rels["models"] = _with_recipes(rels["models"], catalog.model_key, MODEL_RECIPE_COLUMNS, model_recipe)
    rels["hypotheses"] = _with_recipes(rels["hypotheses"], lambda r: str(r["h"]), HYPOTHESIS_RECIPE_COLUMNS,
                                       hyp_recipe)
    for name, t in rels.items():
        with open(d / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(t.columns)
            w.writerows(t.rows)
    if catalog.alphabet is not None:
        (d / "alphabet.txt").write_text("".join(a + "\n" for a in catalog.alphabet), encoding="utf-8")


@dataclass
class QueryResult:
    columns: tuple[str, ...]
    rows: list[tuple]
    inspect_rows: list[dict]
    groups: list[UnitGroup]
    outcome: Any = None


class _Scope:
    def __init__(self, ast: QueryAst, catalog: Catalog):
        self.aliases = {}
        for f in ast.from_:
            if f.relation not in catalog.relations:
                raise QueryError(f"unknown relation {f.relation!r}")
            self.aliases[f.alias] = catalog.relations[f.relation]
        self.inspect_alias = ast.inspect.alias

    def resolve(self, ref: ColumnRef) -> tuple[str, str]:
        if ref.qualifier is not None:
            if ref.qualifier == self.inspect_alias:
                return ref.qualifier, ref.name
            t = self.aliases.get(ref.qualifier)
            if t is None:
                raise QueryError(f"unknown alias {ref.qualifier!r}")
            if ref.name not in t.columns:
                raise QueryError(f"relation {t.name!r} has no column {ref.name!r}")
            return ref.qualifier, ref.name
        owners = [a for a, t in self.aliases.items() if ref.name in t.columns]
        if len(owners) != 1:
            raise QueryError(f"column {ref.name!r} is {'ambiguous' if owners else 'unknown'}")
        return owners[0], ref.name


def _value(side, binding):
    if isinstance(side, Literal):
        return side.value
    a, c = side
    return binding[a][c]


def _holds(pred, binding) -> bool:
    try:
        return bool(OPS[pred[1]](_value(pred[0], binding), _value(pred[2], binding)))
    except TypeError:
        return False


def execute(ast: QueryAst, catalog: Catalog, config=None) -> QueryResult:
    from .engine import EngineConfig, plan, run
    from .measures import MeasureSpec
    config = config or EngineConfig()
    scope = _Scope(ast, catalog)
    ins = ast.inspect
    over_alias, over_col = scope.resolve(ins.over)
    unit_ref = scope.resolve(ins.unit)
    hyp_ref = scope.resolve(ins.hypothesis)
    keys = [scope.resolve(k) for k in ast.group_by]

    def lower(p: Comparison):
        conv = lambda s: s if isinstance(s, Literal) else scope.resolve(s)
        return (conv(p.left), p.op, conv(p.right))
    preds = [lower(p) for p in ast.where]
    pred_aliases = [{s[0] for s in (p[0], p[2]) if not isinstance(s, Literal)} for p in preds]
    if any(over_alias in a and len(a) > 1 for a in pred_aliases):
        raise QueryError("joins with the OVER relation are not supported")

    # Filter each relation by its own predicates, then nested-loop join the rest.
    bindings = [{}]
    for alias, table in scope.aliases.items():
        if alias == over_alias:
            continue
        local = [p for p, a in zip(preds, pred_aliases) if a == {alias}]
        rows = [r for r in table.records() if all(_holds(p, {alias: r}) for p in local)]
        new = []
        for b in bindings:
            for r in rows:
                nb = dict(b)
                nb[alias] = r
                ready = [p for p, a in zip(preds, pred_aliases) if alias in a and a <= set(nb) and len(a) > 1]
                if all(_holds(p, nb) for p in ready):
                    new.append(nb)
        bindings = new
    seq_preds = [p for p, a in zip(preds, pred_aliases) if a == {over_alias}]
    seqs = [str(r[over_col]) for r in scope.aliases[over_alias].records()
            if all(_holds(p, {over_alias: r}) for p in seq_preds)]
    if not bindings:
        raise QueryError("the FROM/WHERE clauses select no units")
    if not seqs:
        raise QueryError("the OVER clause selects no sequences")

    model_alias = next((a for a, t in scope.aliases.items() if t.name == "models"), None)

    def model_of(b):
        if model_alias is not None:
            return catalog.model_key(b[model_alias]), b[model_alias]["mid"]
        mid = b[unit_ref[0]]["mid"]
        row = next(r for r in catalog.relations["models"].records() if r["mid"] == mid)
        return catalog.model_key(row), mid

    hyp_ids, grouped = [], {}
    for b in bindings:
        hid = str(b[hyp_ref[0]][hyp_ref[1]])
        if hid not in catalog.hypothesis_specs:
            raise QueryError(f"hypothesis {hid!r} has no recipe in the catalog")
        if hid not in hyp_ids:
            hyp_ids.append(hid)
        key = tuple(b[a][c] for a, c in keys)
        mkey, mid = model_of(b)
        grouped.setdefault((key, mkey), (mid, set()))[1].add(int(b[unit_ref[0]][unit_ref[1]]))

    alphabet = catalog.alphabet
    if alphabet is None:
        alphabet = [catalog.pad] + sorted({c for s in seqs for c in s} - {catalog.pad})
    dataset = SymbolDataset.from_lines(seqs, catalog.n_s, catalog.pad, alphabet=list(alphabet))
    all_hyps = list(catalog.hypothesis_specs.values())
    evaluator = HypothesisEvaluator(all_hyps, catalog.grammar, pad=catalog.pad)
    hyps = [catalog.hypothesis_specs[h] for h in hyp_ids]
    inspect_eval = HypothesisEvaluator(hyps, catalog.grammar, pad=catalog.pad)
    measures = [MeasureSpec(m, MEASURE_ALIASES[m]) for m in ins.measures]

    groups, group_info, extractors = [], {}, {}
    for (key, mkey), (mid, units) in sorted(grouped.items(), key=lambda kv: (repr(kv[0][0]), kv[0][1])):
        gid = f"{'|'.join(map(str, key))}@{mkey}" if key else mkey
        groups.append(UnitGroup(mkey, tuple(sorted(units)), gid))
        group_info[gid] = (key, mid)
        extractors[mkey] = catalog.extractor(mkey, dataset, evaluator)
    p = plan(groups, hyps, measures, config, extractors, inspect_eval)
    outcome = run(p, dataset, config)

    inspect_rows = []
    key_names = [(a, c) for a, c in keys]
    for r in outcome.results:
        key, mid = group_info[r.group_id]
        row = {"uid": r.unit_id, "hid": r.hyp_id, "mid": mid, "group_score": r.group_score,
               "unit_score": r.unit_score, "score_id": r.score_id, "status": r.status}
        binding = {ins.alias: row}
        for (a, c), v in zip(key_names, key):
            binding.setdefault(a, {})[c] = v
        having = [lower_having(h, scope, ins.alias, key_names) for h in ast.having]
        if all(_holds(h, binding) for h in having):
            inspect_rows.append(binding)

    cols = []
    for ref in ast.select:
        a, c = scope.resolve(ref)
        if a != ins.alias and (a, c) not in key_names:
            raise QueryError(f"SELECT column {ref} must be a GROUP BY key or an INSPECT column")
        cols.append((a, c))
    rows = [tuple(b[a][c] for a, c in cols) for b in inspect_rows]
    flat = [dict(b[ins.alias]) for b in inspect_rows]
    return QueryResult(tuple(str(r) for r in ast.select), rows, flat, groups, outcome)


def lower_having(p: Comparison, scope: _Scope, alias: str, key_names):
    def conv(s):
        if isinstance(s, Literal):
            return s
        a, c = scope.resolve(s)
        if a != alias and (a, c) not in key_names:
            raise QueryError(f"HAVING may reference only GROUP BY keys and {alias}.*, not {s}")
        return (a, c)
    return (conv(p.left), p.op, conv(p.right))


def run_query(text: str, catalog: Catalog, config=None) -> QueryResult:
    return execute(parse_query(text), catalog, config)


EPOCH_QUERY = """\
SELECT M.epoch, S.uid
INSPECT U.uid AND H.h USING corr OVER D.seq AS S
FROM models M, units U, hypotheses H, inputs D
WHERE M.mid = U.mid AND M.mid = 'sqlparser' AND U.layer = 0 AND H.name = 'keywords'
GROUP BY M.epoch
HAVING S.unit_score > 0.8"""


def seeded_catalog(seed: int = 0, n_records: int = 600, n_s: int = 30, n_units: int = 32) -> Catalog:
    """Three epochs of a 'sqlparser' model whose layer-0 units in S track SQL keywords
    with a weight that grows per epoch, plus an unrelated 'charrnn' model."""
    import numpy as np
    from .grammar import sample_many
    from .workloads import sql_grammar
    g = sql_grammar()
    lines = sample_many(g, n_records, seed, n_s + 8)
    layer0 = n_units // 2
    rng = np.random.default_rng([seed, 11])
    S = tuple(sorted(int(u) for u in rng.choice(layer0, 4, replace=False)))
    models_rows, specs = [], {}
    for epoch, w in enumerate((0.2, 0.6, 0.95)):
        key = f"sqlparser@{epoch}"
        specs[key] = ModelSpec(key, "specialized", n_units, seed + 100, S=S, w=w, target_hyp="kw", sigma=0.05)
        models_rows.append(("sqlparser", epoch, key))
    specs["charrnn"] = ModelSpec("charrnn", "synthetic-rnn", n_units, seed + 200)
    models_rows.append(("charrnn", 0, "charrnn"))
    units_rows = [(u, mid, 0 if u < layer0 else 1) for mid in ("sqlparser", "charrnn") for u in range(n_units)]
    hyp_specs = {
        "kw": HypothesisSpec("kw", "keyword", {"keyword": ["SELECT", "FROM", "WHERE", "AND"]}),
        "sel": HypothesisSpec("sel", "keyword", {"keyword": "SELECT"}),
        "digit": HypothesisSpec("digit", "keyword", {"keyword": list("0123456789")}),
    }
    hyp_rows = [("kw", "keywords"), ("sel", "select"), ("digit", "digits")]
    rels = {
        "models": Table("models", ("mid", "epoch", "model_key"), models_rows),
        "units": Table("units", ("uid", "mid", "layer"), units_rows),
        "hypotheses": Table("hypotheses", ("h", "name"), hyp_rows),
        "inputs": Table("inputs", ("seq",), [(s,) for s in lines]),
    }
    alphabet = tuple([DEFAULT_PAD] + sorted(g.terminals))
    return Catalog(rels, specs, hyp_specs, n_s, DEFAULT_PAD, None, alphabet)
