"""Execution of (unit groups x hypotheses x measures) over a streamed dataset."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import AffinityResult, SymbolDataset, UnitGroup, block_iterator, n_blocks
from .extract import Extractor
from .hypothesis import HypothesisError, HypothesisEvaluator, HypothesisSpec
from .measures import MeasureSpec, make_measure

STRATEGIES = ("naive", "merged", "early-stop", "streaming")
PHASES = ("unit-extract", "hyp-extract", "inspect")


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    n_b: int = 512
    eps: Mapping[str, float] = field(default_factory=lambda: {"pearson": 0.025, "logreg": 0.01})
    confidence: float = 0.95
    seed: int = 0
    strategy: str = "streaming"
    max_records: int | None = None
    skip_unparsed: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_b < 1:
            raise EngineError("n_b must be >= 1")
        if any(not v > 0 for v in self.eps.values()):
            raise EngineError("eps must be positive")
        if self.strategy not in STRATEGIES:
            raise EngineError(f"unknown strategy {self.strategy!r}")
        if self.workers < 1:
            raise EngineError("workers must be >= 1")
        if self.max_records is not None and self.max_records < 1:
            raise EngineError("max_records must be >= 1")


@dataclass
class InspectionPlan:
    groups: list[UnitGroup]
    hypotheses: list[HypothesisSpec]
    measures: list[MeasureSpec]
    tasks: list[tuple[UnitGroup, HypothesisSpec, MeasureSpec]]
    extractors: dict[str, Extractor]
    evaluator: HypothesisEvaluator


def plan(groups: Sequence[UnitGroup], hypotheses: Sequence[HypothesisSpec], measures: Sequence[MeasureSpec],
         config: EngineConfig | None = None, extractors: Mapping[str, Extractor] | None = None,
         evaluator: HypothesisEvaluator | None = None, grammar=None, cache=None) -> InspectionPlan:
    if not groups or not hypotheses or not measures:
        raise EngineError("plan needs at least one unit group, hypothesis and measure")
    for what, ids in (("hypothesis", [h.hyp_id for h in hypotheses]),
                      ("measure", [m.score_id for m in measures]),
                      ("group", [g.group_id for g in groups])):
        if len(set(ids)) != len(ids):
            raise EngineError(f"duplicate {what} ids")
    extractors = dict(extractors or {})
    missing = sorted({g.model_id for g in groups} - set(extractors))
    if missing:
        raise EngineError(f"no extractor bound for model(s) {missing}")
    if evaluator is None:
        evaluator = HypothesisEvaluator(hypotheses, grammar, cache)
    tasks = [(g, h, m) for g in groups for h in hypotheses for m in measures]
    return InspectionPlan(list(groups), list(hypotheses), list(measures), tasks, extractors, evaluator)


@dataclass
class RunOutcome:
    results: list[AffinityResult]
    blocks_read: int
    blocks_inspected: int
    blocks_total: int
    timings: dict[str, float]
    strategy: str

    @property
    def ok(self) -> bool:
        return all(not r.status.startswith("error") for r in self.results)


class _Task:
    """Running state for one (group, measure) and a subset of hypotheses.

    Independent measures freeze each (unit, hypothesis) pair when it converges;
    the joint measure keeps training until every hypothesis converges at once.
    """

    def __init__(self, group, measure_spec, hyp_ids, eps, early):
        self.group = group
        self.spec = measure_spec
        self.measure = make_measure(measure_spec)
        self.hyp_ids = list(hyp_ids)
        self.eps = eps
        self.early = early
        n_u, n_h = len(group.unit_ids), len(self.hyp_ids)
        self.state = self.measure.init_state(n_u, n_h)
        shape = (n_h,) if self.measure.joint else (n_u, n_h)
        self.conv = np.zeros(shape, dtype=bool)
        self.out = None
        self.frozen = None
        self.error = None
        self.hyp_errors: dict[str, str] = {}
        self.done = False

    def _bad(self) -> np.ndarray:
        return np.array([h in self.hyp_errors for h in self.hyp_ids])

    def pending_units(self) -> list[int]:
        if self.done:
            return []
        if self.measure.joint or not self.early:
            return list(self.group.unit_ids)
        return [u for u, row in zip(self.group.unit_ids, self.conv | self._bad()) if not row.all()]

    def pending_hyps(self) -> list[str]:
        ok = [h for h in self.hyp_ids if h not in self.hyp_errors]
        if self.done:
            return []
        if self.measure.joint or not self.early:
            return ok
        return [h for h, col in zip(self.hyp_ids, self.conv.T) if not col.all() and h in ok]

    def fail(self, message: str):
        self.error = message
        self.done = True

    def fail_hyp(self, hyp_id: str, message: str):
        """Drop one hypothesis; the others keep running."""
        self.hyp_errors[hyp_id] = message
        if self._bad().all():
            self.fail(message)

    def step(self, U_cols: Mapping[int, np.ndarray], H_cols: Mapping[str, np.ndarray]):
        bad = self._bad()
        if self.measure.joint:
            U = np.column_stack([U_cols[u] for u in self.group.unit_ids])
            zero = np.zeros(U.shape[0])
            H = np.column_stack([H_cols.get(h, zero) for h in self.hyp_ids])
            out = self.measure.process_block(self.state, U, H)
            self.out = out
            self.conv = out.err <= self.eps
            if self.early and (self.conv | bad).all():
                self.done = True
            return
        live = ~self.conv if self.early else np.ones_like(self.conv)
        live[:, bad] = False
        ui = [i for i in range(len(self.group.unit_ids)) if live[i].any()]
        hi = [j for j in range(len(self.hyp_ids)) if live[:, j].any()]
        U = np.column_stack([U_cols[self.group.unit_ids[i]] for i in ui])
        H = np.column_stack([H_cols[self.hyp_ids[j]] for j in hi])
        out = self.measure.process_block(self.state, U, H, ui, hi)
        if self.frozen is None:
            self.frozen = MeasureOutputSnapshot(out)
        fresh = np.zeros_like(self.conv)
        fresh[np.ix_(ui, hi)] = True
        fresh &= live
        self.frozen.take(out, fresh)
        if not self.early:
            self.conv = out.err <= self.eps
            return
        self.conv |= fresh & (out.err <= self.eps)
        if (self.conv | bad).all():
            self.done = True

    def rows(self) -> list[AffinityResult]:
        g = self.group
        rows = []
        for j, hid in enumerate(self.hyp_ids):
            for i, u in enumerate(g.unit_ids):
                if self.error is None and self.out is None and self.frozen is None:
                    self.error = "no records were inspected"
                error = self.error if self.error is not None else self.hyp_errors.get(hid)
                if error is not None:
                    rows.append(AffinityResult(g.model_id, self.spec.score_id, hid, u, 0.0, 0.0, 0, False,
                                               f"error: {error}", g.group_id))
                    continue
                if self.measure.joint:
                    o = self.out
                    us, gs, n = o.unit_scores[i, j], o.group_scores[j], o.n_used[j]
                    degen, conv = o.degenerate[j], self.conv[j]
                else:
                    f = self.frozen
                    us = gs = f.scores[i, j]
                    n, degen, conv = f.n_used[i, j], f.degenerate[i, j], self.conv[i, j]
                rows.append(AffinityResult(g.model_id, self.spec.score_id, hid, u, float(us), float(gs),
                                           int(n), bool(conv), "degenerate" if degen else "ok", g.group_id))
        return rows


class MeasureOutputSnapshot:
    """Per-pair values as of each pair's last update before it froze."""

    def __init__(self, out):
        self.scores = out.unit_scores.copy()
        self.n_used = out.n_used.copy()
        self.degenerate = out.degenerate.copy()

    def take(self, out, mask):
        self.scores[mask] = out.unit_scores[mask]
        self.n_used[mask] = out.n_used[mask]
        self.degenerate[mask] = out.degenerate[mask]


def _build_tasks(p: InspectionPlan, config: EngineConfig, early: bool) -> tuple[list[_Task], list[_Task]]:
    """Returns (live tasks, tasks failed before running)."""
    live, failed = [], []
    separate = config.strategy == "naive"
    for g in p.groups:
        for m in p.measures:
            eps = m.resolved_eps(config.eps)
            ok = [h.hyp_id for h in p.hypotheses if not m.needs_binary or h.output_kind == "binary"]
            bad = [h.hyp_id for h in p.hypotheses if h.hyp_id not in ok]
            if bad:
                t = _Task(g, m, bad, eps, early)
                t.fail(f"{m.kind} requires binary hypotheses")
                failed.append(t)
            if not ok:
                continue
            if m.joint and separate:
                live.extend(_Task(g, m, [h], eps, early) for h in ok)
            else:
                live.append(_Task(g, m, ok, eps, early))
    return live, failed


class _Runner:
    def __init__(self, p: InspectionPlan, dataset: SymbolDataset, config: EngineConfig):
        self.p = p
        self.ds = dataset
        self.cfg = config
        self.timings = {ph: 0.0 for ph in PHASES}
        self.hyp_errors: dict[str, str] = {}
        self.model_errors: dict[str, str] = {}
        self.pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def _map(self, fn, items):
        if self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))

    def extract_units(self, block, needed: Mapping[str, list[int]]):
        t0 = time.perf_counter()

        def one(item):
            mid, units = item
            if mid in self.model_errors or not units:
                return mid, None
            try:
                vals = self.p.extractors[mid].extract(block.symbols, units, block.indices)
            except Exception as exc:
                self.model_errors[mid] = f"{type(exc).__name__}: {exc}"
                return mid, None
            return mid, {u: vals[:, j] for j, u in enumerate(units)}

        out = dict(self._map(one, sorted(needed.items())))
        self.timings["unit-extract"] += time.perf_counter() - t0
        return out

    def extract_hyps(self, block, hyp_ids: list[str]):
        t0 = time.perf_counter()
        ids = [h for h in hyp_ids if h not in self.hyp_errors]
        cols, valid = {}, np.ones(block.n_records, dtype=bool)
        while ids:
            try:
                hb = self.p.evaluator.evaluate(self.ds, block, ids)
            except HypothesisError as exc:
                bad = exc.hyp_id if exc.hyp_id in ids else ids[0]
                self.hyp_errors[bad] = str(exc)
                ids.remove(bad)
                continue
            cols = {h: hb.values[:, j] for j, h in enumerate(hb.column_ids)}
            valid = hb.valid if hb.valid is not None else valid
            break
        self.timings["hyp-extract"] += time.perf_counter() - t0
        return cols, valid

    def inspect(self, tasks, block, ucols, hcols, valid):
        t0 = time.perf_counter()
        rows = block.symbol_perm
        if self.cfg.skip_unparsed:
            keep = np.repeat(valid, self.ds.n_s)[rows]
            rows = rows[keep]

        def one(task):
            if task.done:
                return
            mid = task.group.model_id
            if mid in self.model_errors:
                task.fail(self.model_errors[mid])
                return
            for h in task.hyp_ids:
                if h in self.hyp_errors and h not in task.hyp_errors:
                    task.fail_hyp(h, self.hyp_errors[h])
            if task.done:
                return
            try:
                U = {u: ucols[mid][u][rows] for u in task.pending_units()}
                H = {h: hcols[h][rows] for h in task.pending_hyps()}
                task.step(U, H)
            except Exception as exc:
                task.fail(f"{type(exc).__name__}: {exc}")

        self._map(one, tasks)
        self.timings["inspect"] += time.perf_counter() - t0

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _needs(tasks):
    units: dict[str, set] = {}
    hyps: list[str] = []
    for t in tasks:
        if t.done:
            continue
        units.setdefault(t.group.model_id, set()).update(t.pending_units())
        for h in t.pending_hyps():
            if h not in hyps:
                hyps.append(h)
    return {m: sorted(u) for m, u in units.items()}, hyps


def run(p: InspectionPlan, dataset: SymbolDataset, config: EngineConfig | None = None) -> RunOutcome:
    config = config or EngineConfig()
    if dataset.n_d == 0:
        raise EngineError("dataset is empty")
    for mid, ex in p.extractors.items():
        if ex.alphabet != dataset.alphabet:
            raise EngineError(f"extractor for {mid!r} was built for a different alphabet")
    early = config.strategy in ("early-stop", "streaming")
    tasks, failed = _build_tasks(p, config, early)
    runner = _Runner(p, dataset, config)
    n_total = n_blocks(min(dataset.n_d, config.max_records or dataset.n_d), config.n_b)
    blocks = block_iterator(dataset, config.n_b, config.seed, config.max_records)
    read = inspected = 0
    try:
        if config.strategy == "streaming":
            for block in blocks:
                units, hyps = _needs(tasks)
                if not hyps:
                    break
                ucols = runner.extract_units(block, units)
                hcols, valid = runner.extract_hyps(block, hyps)
                read += 1
                runner.inspect(tasks, block, ucols, hcols, valid)
                inspected += 1
        else:
            units, hyps = _needs(tasks)
            staged = []
            for block in blocks:
                staged.append((block, runner.extract_units(block, units), *runner.extract_hyps(block, hyps)))
                read += 1
            for block, ucols, hcols, valid in staged:
                if early and all(t.done for t in tasks):
                    break
                runner.inspect(tasks, block, ucols, hcols, valid)
                inspected += 1
    finally:
        runner.close()
    results = _collect(p, tasks + failed)
    return RunOutcome(results, read, inspected, n_total, runner.timings, config.strategy)


def _collect(p: InspectionPlan, tasks: list[_Task]) -> list[AffinityResult]:
    by_key = {}
    for t in tasks:
        for r in t.rows():
            by_key[(r.group_id, r.score_id, r.hyp_id, r.unit_id)] = r
    out = []
    for g, h, m in p.tasks:
        for u in g.unit_ids:
            out.append(by_key[(g.group_id, m.score_id, h.hyp_id, u)])
    return out


def write_results(results: Sequence[AffinityResult], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AffinityResult.CSV_HEADER)
        for r in results:
            w.writerow(r.csv_row())


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


BENCH_HEADER = ("strategy", "phase", "seconds", "blocks_read")


def bench(p: InspectionPlan, dataset: SymbolDataset, config: EngineConfig | None = None,
          strategies: Sequence[str] = STRATEGIES) -> tuple[list[tuple], dict[str, RunOutcome]]:
    """Run each strategy on the same plan; one timing row per (strategy, phase)."""
    config = config or EngineConfig()
    table, outcomes = [], {}
    for s in strategies:
        out = run(p, dataset, replace(config, strategy=s))
        outcomes[s] = out
        for ph in PHASES:
            table.append((s, ph, out.timings[ph], out.blocks_read))
    return table, outcomes


def write_bench(table: Sequence[tuple], dest) -> None:
    """Write the timing table to a path or an open text stream."""
    if hasattr(dest, "write"):
        _bench_rows(table, dest)
        return
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        _bench_rows(table, fh)


def _bench_rows(table, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for s, ph, sec, br in table:
        w.writerow([s, ph, f"{sec:.6f}", br])
