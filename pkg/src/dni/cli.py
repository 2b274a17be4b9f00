"""Command-line entry point: ``dni <subcommand> ...``.

Run configs are INI files::

    [paths]
    dataset = records.txt
    grammar = sql.pcfg          ; optional, needed for tree hypotheses
    hypotheses = hyps.json
    output = results.csv

    [data]
    n_s = 30

    [engine]
    strategy = streaming

    [model:rnn]
    kind = synthetic-rnn
    n_units = 64

    [group:all]
    model = rnn
    units = 0-63

    [measure:corr]
    kind = pearson
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import core, engine, extract, grammar, hypothesis, inspectql, measures, verify, workloads

DEFAULTS = {
    "paths": {"dataset": "", "alphabet": "", "grammar": "", "hypotheses": "", "output": "results.csv",
              "cache_dir": ""},
    "data": {"n_s": "30", "pad": core.DEFAULT_PAD},
    "engine": {"n_b": "512", "seed": "0", "strategy": "streaming", "max_records": "", "skip_unparsed": "false",
               "workers": "1", "confidence": "0.95", "eps_pearson": "0.025", "eps_logreg": "0.01",
               "parse_mode": "viterbi", "cache_bytes": str(256 << 20)},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    path: Path | None
    parser: configparser.ConfigParser
    engine: engine.EngineConfig
    models: dict[str, extract.ModelSpec] = field(default_factory=dict)
    groups: list[core.UnitGroup] = field(default_factory=list)
    measures: list[measures.MeasureSpec] = field(default_factory=list)

    def path_of(self, key: str) -> Path | None:
        raw = self.parser.get("paths", key, fallback="").strip()
        if not raw:
            return None
        p = Path(raw)
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def path_of_model(self, section) -> Path:
        p = Path(section["path"])
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    @property
    def n_s(self) -> int:
        return self.parser.getint("data", "n_s")

    @property
    def pad(self) -> str:
        return self.parser.get("data", "pad")

    @property
    def cache_dir(self) -> Path | None:
        env = os.environ.get("DNI_CACHE_DIR")
        return Path(env) if env else self.path_of("cache_dir")


def _parse_units(text: str) -> tuple[int, ...]:
    out = []
    for part in text.replace(",", " ").split():
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(sorted(set(out)))


def _num(v: str):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_dict(DEFAULTS)
    p = None
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        cp.read(p, encoding="utf-8")
    for (sec, key), val in (overrides or {}).items():
        if val is not None:
            cp.set(sec, key, str(val))
    e = cp["engine"]
    try:
        eng = engine.EngineConfig(
            n_b=e.getint("n_b"), seed=e.getint("seed"), strategy=e.get("strategy"),
            max_records=int(e["max_records"]) if e.get("max_records", "").strip() else None,
            skip_unparsed=e.getboolean("skip_unparsed"), workers=e.getint("workers"),
            confidence=e.getfloat("confidence"),
            eps={"pearson": e.getfloat("eps_pearson"), "logreg": e.getfloat("eps_logreg")})
    except ValueError as exc:
        raise ConfigError(f"[engine]: {exc}") from None
    rc = RunConfig(p, cp, eng)
    for sec in cp.sections():
        kind, _, name = sec.partition(":")
        s = cp[sec]
        try:
            if kind == "model":
                rc.models[name] = extract.ModelSpec(
                    name, s.get("kind", "synthetic-rnn"), s.getint("n_units"), s.getint("seed", 0),
                    str(rc.path_of_model(s)) if s.get("path") else None,
                    _parse_units(s.get("S", "")), s.getfloat("w", 0.5), s.get("target_hyp") or None,
                    s.getfloat("sigma", extract.DEFAULT_SIGMA))
            elif kind == "group":
                rc.groups.append(core.UnitGroup(s["model"], _parse_units(s["units"]), name))
            elif kind == "measure":
                params = {k: _num(v) for k, v in s.items() if k not in ("kind", "eps", "confidence")}
                rc.measures.append(measures.MeasureSpec(
                    name, s.get("kind", "pearson"), params,
                    s.getfloat("eps") if s.get("eps") else None, s.getfloat("confidence", eng.confidence)))
        except KeyError as exc:
            raise ConfigError(f"[{sec}] is missing {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{sec}]: {exc}") from None
    return rc


def format_config(rc: RunConfig) -> str:
    import io
    buf = io.StringIO()
    rc.parser.write(buf)
    return buf.getvalue()


def _grammar(rc: RunConfig):
    p = rc.path_of("grammar")
    if p is None:
        return None
    if not p.exists():
        raise ConfigError(f"grammar file {p} does not exist")
    return grammar.parse_grammar_file(p.read_text(encoding="utf-8"))


def _dataset(rc: RunConfig) -> core.SymbolDataset:
    p = rc.path_of("dataset")
    if p is None:
        raise ConfigError("[paths] dataset is required")
    if not p.exists():
        raise ConfigError(f"dataset file {p} does not exist")
    return core.load_dataset(p, rc.n_s, rc.pad, rc.path_of("alphabet"))


def _hypotheses(rc: RunConfig, g) -> list[hypothesis.HypothesisSpec]:
    p = rc.path_of("hypotheses")
    if p is None:
        raise ConfigError("[paths] hypotheses is required")
    if not p.exists():
        raise ConfigError(f"hypothesis manifest {p} does not exist")
    return hypothesis.load_manifest(p, g)


def _cache(rc: RunConfig):
    return hypothesis.BehaviorCache(rc.parser.getint("engine", "cache_bytes"), rc.cache_dir)


def build_plan(rc: RunConfig, cache=None):
    g = _grammar(rc)
    ds = _dataset(rc)
    hyps = _hypotheses(rc, g)
    if not rc.groups:
        raise ConfigError("config defines no [group:NAME] sections")
    if not rc.measures:
        rc.measures.append(measures.MeasureSpec("corr", "pearson"))
    mode = rc.parser.get("engine", "parse_mode")
    ev = hypothesis.HypothesisEvaluator(hyps, g, cache, mode, ds.pad)
    extractors = {}
    for grp in rc.groups:
        if grp.model_id not in rc.models:
            raise ConfigError(f"group {grp.group_id!r} refers to model {grp.model_id!r} with no [model:] binding")
    for name, spec in rc.models.items():
        target_ev = ev
        if spec.kind == "specialized":
            target_ev = hypothesis.HypothesisEvaluator(hyps, g, None, mode, ds.pad)
        extractors[name] = extract.Extractor(spec, ds.alphabet, ds.pad, target_ev)
    p = engine.plan(rc.groups, hyps, rc.measures, rc.engine, extractors, ev)
    return p, ds


ERROR_TYPES = [
    (ConfigError, "ConfigError"), (core.DatasetError, "DatasetError"), (core.BehaviorFileError, "FormatError"),
    (grammar.GrammarError, "GrammarError"), (grammar.SampleError, "SampleError"),
    (hypothesis.HypothesisError, "HypothesisError"), (extract.ExtractionError, "ExtractionError"),
    (measures.MeasureError, "MeasureError"), (engine.EngineError, "EngineError"),
    (inspectql.QueryError, "QueryError"), (verify.VerificationError, "VerificationError"),
    (OSError, "IOError"), (json.JSONDecodeError, "ConfigError"), (ValueError, "ValueError"),
]


def _fail(exc: Exception) -> int:
    cat = next((name for t, name in ERROR_TYPES if isinstance(exc, t)), type(exc).__name__)
    msg = " ".join(str(exc).split())
    print(f"dni-error: {cat}: {msg}", file=sys.stderr)
    return 2


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    if args.grammar in ("paren", "sql"):
        g = workloads.paren_grammar() if args.grammar == "paren" else workloads.sql_grammar()
    else:
        g = grammar.parse_grammar_file(Path(args.grammar).read_text(encoding="utf-8"))
    lines = grammar.sample_many(g, args.n, args.seed, args.max_len or args.n_s)
    ds = core.SymbolDataset.from_lines(lines, args.n_s, args.pad, alphabet=[args.pad] + sorted(g.terminals))
    core.write_dataset(ds, args.out)
    return 0


def _run_config(args) -> RunConfig:
    overrides = {("engine", "seed"): args.seed, ("engine", "workers"): args.workers,
                 ("engine", "strategy"): getattr(args, "strategy", None)}
    return load_config(args.config, overrides)


def cmd_inspect(args) -> int:
    rc = _run_config(args)
    if args.print_config:
        sys.stdout.write(format_config(rc))
        return 0
    if args.config is None:
        raise ConfigError("--config is required")
    p, ds = build_plan(rc, cache=_cache(rc))
    out = engine.run(p, ds, rc.engine)
    dest = Path(args.out) if args.out else rc.path_of("output")
    engine.write_results(out.results, dest)
    if args.stats:
        print(json.dumps({"blocks_read": out.blocks_read, "blocks_inspected": out.blocks_inspected,
                          "blocks_total": out.blocks_total, "timings": out.timings}))
    return 0 if out.ok else 1


def cmd_verify(args) -> int:
    rc = _run_config(args)
    g = _grammar(rc)
    ds = _dataset(rc)
    hyps = _hypotheses(rc, g)
    ev = hypothesis.HypothesisEvaluator(hyps, g, None, rc.parser.get("engine", "parse_mode"), ds.pad)
    if args.hyp not in [h.hyp_id for h in hyps]:
        raise ConfigError(f"unknown hypothesis {args.hyp!r}")
    grp = next((gr for gr in rc.groups if gr.group_id == args.group), None)
    if grp is None:
        raise ConfigError(f"unknown group {args.group!r}")
    units = _parse_units(args.units) if args.units else grp.unit_ids
    ex = extract.Extractor(rc.models[grp.model_id], ds.alphabet, ds.pad, ev)
    rep = verify.verify(units, lambda t: ev.evaluate_record(args.hyp, t), ds, ex, args.n_samples,
                        rc.engine.seed, control=not args.no_control)
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_query(args) -> int:
    if args.query_file:
        text = Path(args.query_file).read_text(encoding="utf-8")
    elif args.query:
        text = args.query
    else:
        text = inspectql.EPOCH_QUERY
    if args.catalog:
        cat = inspectql.load_catalog(args.catalog, args.n_s)
    else:
        cat = inspectql.seeded_catalog(args.seed)
    cfg = engine.EngineConfig(seed=args.seed, workers=args.workers or 1)
    res = inspectql.run_query(text, cat, cfg)
    import csv
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        if args.inspect_relation:
            w.writerow(inspectql.INSPECT_COLUMNS)
            w.writerows([[r[c] for c in inspectql.INSPECT_COLUMNS] for r in res.inspect_rows])
        else:
            w.writerow(res.columns)
            w.writerows(res.rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_extract(args) -> int:
    rc = _run_config(args)
    if args.model not in rc.models:
        raise ConfigError(f"unknown model {args.model!r}")
    g = _grammar(rc)
    ds = _dataset(rc)
    ev = None
    if rc.models[args.model].kind == "specialized":
        ev = hypothesis.HypothesisEvaluator(_hypotheses(rc, g), g, None, pad=ds.pad)
    ex = extract.Extractor(rc.models[args.model], ds.alphabet, ds.pad, ev)
    extract.write_model_behaviors(ex, ds, args.out, rc.engine.n_b)
    return 0


def cmd_bench(args) -> int:
    rc = _run_config(args)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in engine.STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}")
    p, ds = build_plan(rc, cache=None)
    table, _ = engine.bench(p, ds, rc.engine, strategies)
    if args.out:
        engine.write_bench(table, args.out)
    else:
        engine.write_bench(table, sys.stdout)
    return 0


def cmd_cache_clear(args) -> int:
    d = Path(args.cache_dir) if args.cache_dir else None
    if d is None and args.config:
        d = load_config(args.config).cache_dir
    if d is None and os.environ.get("DNI_CACHE_DIR"):
        d = Path(os.environ["DNI_CACHE_DIR"])
    if d is None:
        raise ConfigError("no cache directory given (--cache-dir, config [paths] cache_dir or DNI_CACHE_DIR)")
    n = hypothesis.BehaviorCache(0, d).clear(disk=True) if d.exists() else 0
    print(f"removed {n} cache file(s) from {d}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dni", description="Hidden-unit affinity inspection.")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("gen-data", parents=[common], help="sample records from a PCFG")
    p.add_argument("--grammar", required=True, help="grammar file, or 'paren' / 'sql' for the bundled ones")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--n_s", "--n-s", dest="n_s", type=int, required=True)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--pad", default=core.DEFAULT_PAD)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("inspect", parents=[common], help="run DNI over a config")
    p.add_argument("--config")
    p.add_argument("--strategy", choices=engine.STRATEGIES)
    p.add_argument("--out")
    p.add_argument("--stats", action="store_true", help="print blocks read and phase timings as JSON")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("verify", parents=[common], help="perturbation verification of a unit group")
    p.add_argument("--config", required=True)
    p.add_argument("--group", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--units", help="subset of the group's units, e.g. '1 4 7' or '0-3'")
    p.add_argument("--n-samples", type=int, default=200)
    p.add_argument("--no-control", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("query", parents=[common], help="run an INSPECT query")
    p.add_argument("--query")
    p.add_argument("--query-file")
    p.add_argument("--catalog", help="directory of relation CSVs (default: the seeded demo catalog)")
    p.add_argument("--n_s", "--n-s", dest="n_s", type=int, default=30)
    p.add_argument("--inspect-relation", action="store_true", help="emit the INSPECT relation instead")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("extract", parents=[common], help="write a model's unit behaviors as DNIB1")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("bench", parents=[common], help="compare execution strategies")
    p.add_argument("--config", required=True)
    p.add_argument("--strategies", default=",".join(engine.STRATEGIES))
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("cache-clear", parents=[common], help="delete cached hypothesis behaviors")
    p.add_argument("--config")
    p.add_argument("--cache-dir")
    p.set_defaults(fn=cmd_cache_clear)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = 0 if args.command in ("gen-data", "query") else None
    if getattr(args, "workers", None) is not None and args.workers < 1:
        return _fail(ConfigError("--workers must be >= 1"))
    try:
        return args.fn(args)
    except Exception as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
