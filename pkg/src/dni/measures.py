"""Affinity measures with an incremental ``process_block`` interface.

Independent measures (pearson, mutual-info, jaccard, diff-means) keep one set
of running statistics per (unit, hypothesis) pair. The joint measure (logreg)
fits one merged multi-output model per unit group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.stats import norm

MEASURE_KINDS = ("pearson", "mutual-info", "jaccard", "diff-means", "logreg")
BINARY_ONLY = ("mutual-info", "jaccard", "diff-means", "logreg")
DEFAULT_EPS = {"pearson": 0.025, "logreg": 0.01, "diff-means": 0.025, "mutual-info": 0.025, "jaccard": 0.025}
DEFAULT_PARAMS = {
    "pearson": {},
    "mutual-info": {"bins": 20},
    "jaccard": {"tau": 0.005},
    "diff-means": {},
    "logreg": {"reg": "L1", "strength": 1e-3, "folds": 5, "lr": 0.05, "batch": 512, "window_symbols": 2048},
}


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class MeasureSpec:
    score_id: str
    kind: str
    params: Mapping = field(default_factory=dict, compare=False, hash=False)
    eps: float | None = None
    confidence: float = 0.95

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise MeasureError(f"unknown measure kind {self.kind!r}")
        merged = dict(DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise MeasureError(f"unknown {self.kind} parameter(s) {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if self.eps is not None and not self.eps > 0:
            raise MeasureError("eps must be positive")
        if not 0 < self.confidence < 1:
            raise MeasureError("confidence must lie in (0, 1)")
        if self.kind == "logreg":
            if int(merged["folds"]) < 2:
                raise MeasureError("folds must be >= 2")
            if merged["reg"] not in ("L1", "L2"):
                raise MeasureError("reg must be L1 or L2")
        if self.kind == "jaccard" and not 0 < merged["tau"] < 1:
            raise MeasureError("tau must lie in (0, 1)")
        if self.kind == "mutual-info" and int(merged["bins"]) < 2:
            raise MeasureError("bins must be >= 2")

    def resolved_eps(self, overrides: Mapping | None = None) -> float:
        """Explicit eps, else the per-kind override, else the built-in default."""
        if self.eps is not None:
            return float(self.eps)
        return float((overrides or {}).get(self.kind, DEFAULT_EPS[self.kind]))

    @property
    def joint(self) -> bool:
        return self.kind == "logreg"

    @property
    def needs_binary(self) -> bool:
        return self.kind in BINARY_ONLY


@dataclass
class MeasureOutput:
    """Current estimates. ``err``/``degenerate``/``n_used`` are per pair for
    independent measures and per hypothesis for joint ones."""
    unit_scores: np.ndarray
    group_scores: np.ndarray
    err: np.ndarray
    degenerate: np.ndarray
    n_used: np.ndarray


def _z(confidence: float) -> float:
    return float(norm.ppf(0.5 + confidence / 2))


def fisher_ci(r, n, confidence: float = 0.95):
    """Fisher-z confidence interval for a correlation estimated from n samples."""
    r = np.clip(np.asarray(r, dtype=np.float64), -1 + 1e-15, 1 - 1e-15)
    n = np.asarray(n, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        hw = np.where(n > 3, _z(confidence) / np.sqrt(np.maximum(n - 3, 1e-300)), np.inf)
    z = np.arctanh(r)
    return np.tanh(z - hw), np.tanh(z + hw)


def fisher_err(r, n, confidence: float = 0.95):
    lo, hi = fisher_ci(r, n, confidence)
    return (hi - lo) / 2


def _sub(ui, hi, n_u, n_h):
    ui = np.arange(n_u) if ui is None else np.asarray(ui)
    hi = np.arange(n_h) if hi is None else np.asarray(hi)
    return ui, hi, np.ix_(ui, hi)


def _check(U, H):
    U = np.asarray(U, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if U.ndim != 2 or H.ndim != 2 or U.shape[0] != H.shape[0]:
        raise MeasureError(f"misaligned blocks: units {U.shape} vs hypotheses {H.shape}")
    return U, H


def _require_binary(H):
    if not np.isin(H, (0.0, 1.0)).all():
        raise MeasureError("measure requires binary hypothesis behavior")


class Measure:
    joint = False

    def __init__(self, spec: MeasureSpec):
        self.spec = spec
        self.params = dict(spec.params)

    def init_state(self, n_units: int, n_hyps: int) -> dict:
        raise NotImplementedError

    def process_block(self, state, U, H, ui=None, hi=None) -> MeasureOutput:
        raise NotImplementedError

    def result(self, state) -> MeasureOutput:
        raise NotImplementedError


class Pearson(Measure):
    """Running co-moments merged block-wise (Chan et al. parallel update)."""

    def init_state(self, n_units, n_hyps):
        z = lambda: np.zeros((n_units, n_hyps))
        return {"n": z(), "mx": z(), "my": z(), "sxx": z(), "syy": z(), "sxy": z()}

    def process_block(self, state, U, H, ui=None, hi=None):
        U, H = _check(U, H)
        m = U.shape[0]
        if m:
            ui, hi, sub = _sub(ui, hi, *state["n"].shape)
            bmx, bmy = U.mean(0), H.mean(0)
            dx, dy = U - bmx, H - bmy
            bsxx, bsyy, bsxy = (dx * dx).sum(0), (dy * dy).sum(0), dx.T @ dy
            na = state["n"][sub]
            n = na + m
            ddx = bmx[:, None] - state["mx"][sub]
            ddy = bmy[None, :] - state["my"][sub]
            f = na * m / n
            state["mx"][sub] += ddx * m / n
            state["my"][sub] += ddy * m / n
            state["sxx"][sub] += bsxx[:, None] + ddx * ddx * f
            state["syy"][sub] += bsyy[None, :] + ddy * ddy * f
            state["sxy"][sub] += bsxy + ddx * ddy * f
            state["n"][sub] = n
        return self.result(state)

    def result(self, state):
        n, sxx, syy = state["n"], state["sxx"], state["syy"]
        degen = (sxx <= 1e-18 * n * (1 + state["mx"] ** 2)) | (syy <= 1e-18 * n * (1 + state["my"] ** 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(degen, 0.0, state["sxy"] / np.sqrt(sxx * syy))
        r = np.clip(np.nan_to_num(r), -1.0, 1.0)
        err = fisher_err(r, n, self.spec.confidence)
        return MeasureOutput(r, r, err, degen, n.copy())


class MutualInfo(Measure):
    """Plug-in MI (nats) over equal-frequency bins frozen from the first block."""

    def init_state(self, n_units, n_hyps):
        bins = int(self.params["bins"])
        return {"edges": [None] * n_units, "c1": np.zeros((n_units, bins, n_hyps)),
                "tot": np.zeros((n_units, bins, n_hyps)), "n": np.zeros((n_units, n_hyps))}

    def process_block(self, state, U, H, ui=None, hi=None):
        U, H = _check(U, H)
        _require_binary(H)
        bins = int(self.params["bins"])
        ui, hi, sub = _sub(ui, hi, *state["n"].shape)
        if U.shape[0]:
            for j, u in enumerate(ui):
                if state["edges"][u] is None:
                    state["edges"][u] = quantile_edges(U[:, j], bins)
                b = np.searchsorted(state["edges"][u], U[:, j], side="right")
                onehot = np.zeros((U.shape[0], bins))
                onehot[np.arange(U.shape[0]), b] = 1.0
                state["c1"][u][:, hi] += onehot.T @ H
                state["tot"][u][:, hi] += onehot.sum(0)[:, None]
            state["n"][sub] += U.shape[0]
        return self.result(state)

    def result(self, state):
        c1, tot, n = state["c1"], state["tot"], state["n"]
        mi = mi_from_counts(c1, tot)
        n1 = c1.sum(1)
        degen = (n1 == 0) | (n1 == n)
        mi = np.where(degen, 0.0, mi)
        return MeasureOutput(mi, mi, np.full(mi.shape, np.inf), degen, n.copy())


def quantile_edges(x, bins: int) -> np.ndarray:
    return np.quantile(np.asarray(x, dtype=np.float64), np.linspace(0, 1, bins + 1)[1:-1])


def mi_from_counts(c1, tot):
    """MI from per-bin positive counts and totals; bins on axis -2."""
    c0 = tot - c1
    n = tot.sum(-2, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        py1 = c1.sum(-2, keepdims=True) / n
        pb = tot / n
        out = np.zeros(np.broadcast_shapes(c1.shape))
        for c, py in ((c1, py1), (c0, 1 - py1)):
            p = c / n
            term = np.where(p > 0, p * np.log(p / (pb * py)), 0.0)
            out = out + np.nan_to_num(term)
    return np.maximum(out.sum(-2), 0.0)


class Jaccard(Measure):
    """IoU between the top-tau activations (threshold frozen from the first block) and y."""

    def init_state(self, n_units, n_hyps):
        z = lambda: np.zeros((n_units, n_hyps))
        return {"thr": np.full(n_units, np.nan), "inter": z(), "sx": z(), "sy": z(), "n": z()}

    def process_block(self, state, U, H, ui=None, hi=None):
        U, H = _check(U, H)
        _require_binary(H)
        ui, hi, sub = _sub(ui, hi, *state["n"].shape)
        if U.shape[0]:
            thr = state["thr"]
            fresh = np.isnan(thr[ui])
            if fresh.any():
                thr[ui[fresh]] = np.quantile(U[:, fresh], 1 - self.params["tau"], axis=0)
            xb = (U > thr[ui]).astype(np.float64)
            state["inter"][sub] += xb.T @ H
            state["sx"][sub] += xb.sum(0)[:, None]
            state["sy"][sub] += H.sum(0)[None, :]
            state["n"][sub] += U.shape[0]
        return self.result(state)

    def result(self, state):
        union = state["sx"] + state["sy"] - state["inter"]
        degen = union == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            iou = np.where(degen, 0.0, state["inter"] / union)
        return MeasureOutput(iou, iou, np.full(iou.shape, np.inf), degen, state["n"].copy())


class DiffMeans(Measure):
    """mean(x | y=1) - mean(x | y=0); err is the Welch interval half-width."""

    def init_state(self, n_units, n_hyps):
        z = lambda: np.zeros((n_units, n_hyps))
        return {k: z() for k in ("n1", "n0", "s1", "s0", "q1", "q0")}

    def process_block(self, state, U, H, ui=None, hi=None):
        U, H = _check(U, H)
        _require_binary(H)
        if U.shape[0]:
            ui, hi, sub = _sub(ui, hi, *state["n1"].shape)
            n1 = H.sum(0)
            s1, q1 = U.T @ H, (U * U).T @ H
            state["n1"][sub] += n1[None, :]
            state["n0"][sub] += (U.shape[0] - n1)[None, :]
            state["s1"][sub] += s1
            state["s0"][sub] += U.sum(0)[:, None] - s1
            state["q1"][sub] += q1
            state["q0"][sub] += (U * U).sum(0)[:, None] - q1
        return self.result(state)

    def result(self, state):
        n1, n0 = state["n1"], state["n0"]
        degen = (n1 == 0) | (n0 == 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            m1 = state["s1"] / n1
            m0 = state["s0"] / n0
            v1 = np.maximum(state["q1"] / n1 - m1 ** 2, 0)
            v0 = np.maximum(state["q0"] / n0 - m0 ** 2, 0)
            d = np.where(degen, 0.0, m1 - m0)
            ok = (n1 > 1) & (n0 > 1)
            err = np.where(ok & ~degen, _z(self.spec.confidence) * np.sqrt(v1 / n1 + v0 / n0), np.inf)
        return MeasureOutput(np.nan_to_num(d), np.nan_to_num(d), err, degen, n1 + n0)


def f1_score(pred: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Positive-class F1 per column; 0 when there are no positives and no predictions."""
    tp = (pred * y).sum(0)
    denom = pred.sum(0) + y.sum(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, 2 * tp / denom, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogReg(Measure):
    """Merged multi-output L1/L2 logistic regression with k-fold validation.

    Outputs share the standardized inputs. Each gradient step is the gradient of
    the hypothesis-averaged log-loss rescaled by |H|, which makes every output's
    update identical to that of a separately trained single-output model.
    """
    joint = True

    def init_state(self, n_units, n_hyps):
        k = int(self.params["folds"])
        return {"W": np.zeros((k, n_units, n_hyps)), "b": np.zeros((k, n_hyps)),
                "n": 0, "mean": np.zeros(n_units), "m2": np.zeros(n_units),
                "pos": np.zeros(n_hyps), "history": [], "latest": np.zeros((k, n_hyps)),
                "have_val": np.zeros(n_hyps, dtype=bool), "steps": 0}

    def _update_scaler(self, state, U):
        m = U.shape[0]
        na = state["n"]
        n = na + m
        bm = U.mean(0)
        d = bm - state["mean"]
        state["m2"] += ((U - bm) ** 2).sum(0) + d * d * na * m / n
        state["mean"] += d * m / n
        state["n"] = n

    def _standardize(self, state, U):
        sd = np.sqrt(state["m2"] / max(state["n"], 1))
        sd = np.where(sd > 1e-12, sd, 1.0)
        return (U - state["mean"]) / sd

    def process_block(self, state, U, H, ui=None, hi=None):
        U, H = _check(U, H)
        _require_binary(H)
        if ui is not None or hi is not None:
            raise MeasureError("logreg trains on the whole group; column subsets are not supported")
        m = U.shape[0]
        if m == 0:
            return self.result(state)
        p = self.params
        k, lr, bs = int(p["folds"]), float(p["lr"]), int(p["batch"])
        lam = float(p["strength"])
        window = max(1, int(np.ceil(p["window_symbols"] / bs)))
        self._update_scaler(state, U)
        X = self._standardize(state, U)
        state["pos"] += H.sum(0)
        fold = np.arange(m) % k
        W, b = state["W"], state["b"]
        train = [np.flatnonzero(fold != f) for f in range(k)]
        val = [np.flatnonzero(fold == f) for f in range(k)]
        n_batches = max(len(t) for t in train) // bs + (1 if max(len(t) for t in train) % bs else 0)
        for j in range(n_batches):
            for f in range(k):
                rows = train[f][j * bs:(j + 1) * bs]
                if rows.size == 0:
                    continue
                xb, yb = X[rows], H[rows]
                g = _sigmoid(xb @ W[f] + b[f]) - yb
                W[f] -= lr * (xb.T @ g) / rows.size
                b[f] -= lr * g.mean(0)
                if p["reg"] == "L1":
                    W[f] = np.sign(W[f]) * np.maximum(np.abs(W[f]) - lr * lam, 0.0)
                else:
                    W[f] *= 1.0 - lr * lam
                if val[f].size:
                    pred = (X[val[f]] @ W[f] + b[f] > 0).astype(np.float64)
                    state["latest"][f] = f1_score(pred, H[val[f]])
            state["history"].append(state["latest"].mean(0))
            state["steps"] += 1
        del state["history"][:-window]
        state["window"] = window
        return self.result(state)

    def result(self, state):
        hist = state["history"]
        window = state.get("window", 1)
        group = state["latest"].mean(0)
        if len(hist) >= window and hist:
            err = np.abs(hist[-1] - np.mean(hist[-window:], axis=0))
        else:
            err = np.full(group.shape, np.inf)
        degen = state["pos"] == 0
        err = np.where(degen, np.inf, err)
        unit = np.abs(state["W"]).mean(0)
        n = np.full(group.shape, float(state["n"]))
        return MeasureOutput(unit, np.where(degen, 0.0, group), err, degen, n)


MEASURES = {"pearson": Pearson, "mutual-info": MutualInfo, "jaccard": Jaccard,
            "diff-means": DiffMeans, "logreg": LogReg}


def make_measure(spec: MeasureSpec) -> Measure:
    return MEASURES[spec.kind](spec)


def process_block(measure: Measure, state, U, H, ui=None, hi=None) -> MeasureOutput:
    return measure.process_block(state, U, H, ui, hi)


# Batch reference implementations, used by verification and tests.

def pearson(x, y) -> tuple[float, bool]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = (dx * dx).sum(), (dy * dy).sum()
    if sxx <= 0 or syy <= 0:
        return 0.0, True
    return float(np.clip((dx * dy).sum() / np.sqrt(sxx * syy), -1, 1)), False


def mutual_information(x, y, bins: int = 20, edges=None) -> tuple[float, bool]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _require_binary(y[:, None])
    if y.min() == y.max():
        return 0.0, True
    edges = quantile_edges(x, bins) if edges is None else edges
    b = np.searchsorted(edges, x, side="right")
    tot = np.bincount(b, minlength=bins).astype(np.float64)
    c1 = np.bincount(b, weights=y, minlength=bins)
    return float(mi_from_counts(c1[:, None], tot[:, None])[0]), False


def jaccard_binary(xb, y) -> tuple[float, bool]:
    xb = np.asarray(xb, dtype=bool)
    y = np.asarray(y, dtype=bool)
    union = (xb | y).sum()
    if union == 0:
        return 0.0, True
    return float((xb & y).sum() / union), False


def jaccard(x, y, tau: float = 0.005, threshold=None) -> tuple[float, bool]:
    x = np.asarray(x, dtype=np.float64)
    thr = np.quantile(x, 1 - tau) if threshold is None else threshold
    return jaccard_binary(x > thr, y)


def diff_means(x, y) -> tuple[float, bool]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    if y.all() or not y.any():
        return 0.0, True
    return float(x[y].mean() - x[~y].mean()), False


def gap_cut(scores) -> np.ndarray:
    """Indices above the largest gap in the descending-sorted scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        return np.arange(scores.size)
    order = np.argsort(-scores, kind="stable")
    gaps = -np.diff(scores[order])
    cut = int(np.argmax(gaps)) + 1
    return np.sort(order[:cut])
