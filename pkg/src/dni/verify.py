"""Perturbation-based verification of unit groups.

A baseline swap changes one symbol while keeping the hypothesis value at that
position; a treatment swap changes it. Units that track the hypothesis should
react differently to the two, which the silhouette score summarizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .core import DEFAULT_PAD, SymbolDataset


class VerificationError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationPair:
    record_index: int
    k: int
    s_k: str
    s_b: str
    s_t: str

    def __post_init__(self):
        if self.s_b == self.s_k or self.s_t == self.s_k:
            raise VerificationError("perturbation symbols must differ from the original symbol")

    def apply(self, record: str, label: str) -> str:
        s = self.s_b if label == "baseline" else self.s_t
        return record[:self.k] + s + record[self.k + 1:]


@dataclass
class DeltaSample:
    label: str
    delta: np.ndarray

    def __post_init__(self):
        if self.label not in ("baseline", "treatment"):
            raise VerificationError(f"unknown label {self.label!r}")


def gen_perturbations(record: str, h: Callable[[str], np.ndarray], alphabet: Sequence[str],
                      n_per_record: int, rng: np.random.Generator, pad: str = DEFAULT_PAD,
                      record_index: int = 0) -> list[PerturbationPair]:
    """Sample positions and pick the first valid baseline/treatment symbol in alphabet order."""
    positions = [k for k, s in enumerate(record) if s != pad]
    if not positions or n_per_record < 1:
        return []
    b = h(record)
    picks = rng.permutation(positions)
    pairs = []
    for k in picks:
        k = int(k)
        s_k = record[k]
        s_b = s_t = None
        for s in alphabet:
            if s == pad or s == s_k:
                continue
            v = h(record[:k] + s + record[k + 1:])[k]
            if v == b[k]:
                s_b = s_b or s
            else:
                s_t = s_t or s
            if s_b and s_t:
                break
        if s_b and s_t:
            pairs.append(PerturbationPair(record_index, k, s_k, s_b, s_t))
            if len(pairs) == n_per_record:
                break
    return pairs


def _encode(extractor, texts):
    index = {s: i for i, s in enumerate(extractor.alphabet)}
    return np.array([[index[c] for c in t] for t in texts], dtype=np.int32)


def delta_activations(units: Sequence[int], extractor, record: str,
                      pair: PerturbationPair) -> tuple[DeltaSample, DeltaSample]:
    """Activation change at position k for the baseline and the treatment swap."""
    texts = [record, pair.apply(record, "baseline"), pair.apply(record, "treatment")]
    acts = extractor.extract(_encode(extractor, texts), list(units)).reshape(3, len(record), len(units))
    at = acts[:, pair.k].astype(np.float64)
    return DeltaSample("baseline", at[1] - at[0]), DeltaSample("treatment", at[2] - at[0])


def silhouette_score(X: np.ndarray, labels: Sequence) -> float:
    """Mean silhouette with Euclidean distance; singleton-cluster points score 0."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    kinds = np.unique(labels)
    if len(kinds) < 2:
        raise VerificationError("silhouette needs at least two labels")
    D = cdist(X, X)
    masks = [labels == c for c in kinds]
    sizes = np.array([m.sum() for m in masks])
    mean_to = np.stack([D[:, m].sum(1) / m.sum() for m in masks], axis=1)
    own = np.searchsorted(kinds, labels)
    n_own = sizes[own]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(n_own > 1, D.sum(1, where=labels[None, :] == labels[:, None]) / (n_own - 1), 0.0)
    other = mean_to.copy()
    other[np.arange(len(X)), own] = np.inf
    b = other.min(1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where((n_own > 1) & (denom > 0), (b - a) / denom, 0.0)
    return float(s.mean())


def silhouette(samples: Sequence[DeltaSample]) -> float:
    labels = [s.label for s in samples]
    if set(labels) != {"baseline", "treatment"}:
        raise VerificationError("both baseline and treatment samples are required")
    return silhouette_score(np.stack([s.delta for s in samples]), labels)


@dataclass
class VerificationReport:
    silhouette: float
    n_baseline: int
    n_treatment: int
    units: tuple[int, ...]
    control_silhouette: float | None = None
    control_units: tuple[int, ...] = ()
    samples: list[DeltaSample] = field(default_factory=list, repr=False)
    pairs: list[PerturbationPair] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        def summary(label):
            d = np.stack([s.delta for s in self.samples if s.label == label])
            return {"mean": d.mean(0).tolist(), "std": d.std(0).tolist()}
        return {"silhouette": self.silhouette, "n_baseline": self.n_baseline, "n_treatment": self.n_treatment,
                "units": list(self.units), "control_silhouette": self.control_silhouette,
                "control_units": list(self.control_units),
                "delta": {"baseline": summary("baseline"), "treatment": summary("treatment")}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def verify(units: Sequence[int], h: Callable[[str], np.ndarray], dataset: SymbolDataset, extractor,
           n_samples: int, rng: np.random.Generator | int, control: bool = True,
           n_per_record: int = 2) -> VerificationReport:
    """Collect up to ``n_samples`` perturbation pairs and score ``units`` (and a random control)."""
    if n_samples < 1:
        raise VerificationError("n_samples must be >= 1")
    rng = np.random.default_rng(rng)
    units = tuple(int(u) for u in units)
    pairs, records = [], []
    for i in rng.permutation(dataset.n_d):
        rec = dataset.record_text(int(i))
        for pair in gen_perturbations(rec, h, dataset.alphabet, n_per_record, rng, dataset.pad, int(i)):
            pairs.append(pair)
            records.append(rec)
            if len(pairs) == n_samples:
                break
        if len(pairs) == n_samples:
            break
    if not pairs:
        raise VerificationError("no valid perturbation pair found in the dataset")
    ctrl = ()
    if control:
        n_units = extractor.model.n_units
        pool = [u for u in range(n_units) if u not in units]
        if len(pool) < len(units):
            pool = list(range(n_units))
        ctrl = tuple(sorted(int(u) for u in rng.choice(pool, len(units), replace=False)))
    all_units = sorted(set(units) | set(ctrl))
    col = {u: j for j, u in enumerate(all_units)}
    texts = []
    for rec, p in zip(records, pairs):
        texts += [rec, p.apply(rec, "baseline"), p.apply(rec, "treatment")]
    n_s = dataset.n_s
    acts = extractor.extract(_encode(extractor, texts), all_units).reshape(len(pairs), 3, n_s, len(all_units))
    k = np.array([p.k for p in pairs])
    at = acts[np.arange(len(pairs)), :, k].astype(np.float64)

    def samples_for(us):
        idx = [col[u] for u in us]
        out = []
        for row in at:
            out.append(DeltaSample("baseline", row[1, idx] - row[0, idx]))
            out.append(DeltaSample("treatment", row[2, idx] - row[0, idx]))
        return out

    main = samples_for(units)
    report = VerificationReport(silhouette(main), len(pairs), len(pairs), units, samples=main, pairs=pairs)
    if control:
        report.control_silhouette = silhouette(samples_for(ctrl))
        report.control_units = ctrl
    return report
