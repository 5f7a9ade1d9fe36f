"""Accuracy metrics, McNemar's test, Wilson intervals, regimes, correlations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .ensemble import MemberRecord, prediction_correlation


def _aligned(preds, labels):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError("predictions and labels must be aligned 1-D series")
    if len(preds) == 0:
        raise ValueError("empty prediction series")
    return preds, labels


def accuracy(preds, labels) -> float:
    preds, labels = _aligned(preds, labels)
    return int(np.sum(preds == labels)) / len(preds)


def format_percent(ratio: float, places: int = 2) -> str:
    """0.60139... -> '60.14%'."""
    return f"{100 * ratio:.{places}f}%"


def precision_recall(preds, labels):
    """Precision and recall for the up (+1) class; ``None`` where undefined."""
    preds, labels = _aligned(preds, labels)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    pp = int(np.sum(preds == 1))
    ap = int(np.sum(labels == 1))
    return (tp / pp if pp else None), (tp / ap if ap else None)


def chi2_sf_1df(x: float) -> float:
    """Upper tail of the chi-square distribution with one degree of freedom."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


@dataclass(frozen=True)
class McNemarResult:
    n01: int
    n10: int
    chi2: float
    p: float


def mcnemar(preds_a, preds_b, labels, continuity: bool = False) -> McNemarResult:
    """n01 counts days A is wrong and B right; n10 the reverse."""
    a, labels = _aligned(preds_a, labels)
    b, _ = _aligned(preds_b, labels)
    ra = a == labels
    rb = b == labels
    n01 = int(np.sum(~ra & rb))
    n10 = int(np.sum(ra & ~rb))
    disc = n01 + n10
    if disc == 0:
        return McNemarResult(n01, n10, 0.0, 1.0)
    diff = abs(n01 - n10)
    if continuity:
        diff = max(diff - 1, 0)
    chi2 = diff * diff / disc
    return McNemarResult(n01, n10, chi2, chi2_sf_1df(chi2))


def wilson_ci(successes: int, n: int, confidence: float = 0.95):
    if n < 1 or not 0 <= successes <= n:
        raise ValueError("need 0 <= successes <= n and n >= 1")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == n else min(1.0, center + half)
    return lo, hi


@dataclass(frozen=True)
class RegimeSpec:
    """Left-closed buckets split at ``boundaries``: (-inf,b0), [b0,b1), ..., [bk,inf)."""

    boundaries: tuple = (15.0, 25.0, 35.0)
    names: tuple = ("low", "moderate", "high", "extreme")

    def __post_init__(self):
        if list(self.boundaries) != sorted(self.boundaries):
            raise ValueError("regime boundaries must be increasing")
        if len(self.names) != len(self.boundaries) + 1:
            raise ValueError("need one name per bucket")

    def bucket(self, values) -> np.ndarray:
        return np.searchsorted(np.asarray(self.boundaries), np.asarray(values, dtype=float), side="right")

    def describe(self, i: int) -> str:
        b = self.boundaries
        if i == 0:
            return f"< {b[0]:g}"
        if i == len(b):
            return f">= {b[-1]:g}"
        return f"[{b[i - 1]:g}, {b[i]:g})"


def regime_partition(conditioning, preds, labels, spec: RegimeSpec = RegimeSpec()) -> list:
    preds, labels = _aligned(preds, labels)
    cond = np.asarray(conditioning, dtype=float)
    if cond.shape != preds.shape or not np.isfinite(cond).all():
        raise ValueError("conditioning values must be finite and aligned with predictions")
    buckets = spec.bucket(cond)
    rows = []
    for i, name in enumerate(spec.names):
        mask = buckets == i
        n = int(mask.sum())
        row = {"regime": name, "range": spec.describe(i), "days": n,
               "accuracy": None, "ci": None}
        if n:
            k = int(np.sum(preds[mask] == labels[mask]))
            row["accuracy"] = k / n
            row["ci"] = list(wilson_ci(k, n))
        rows.append(row)
    if sum(r["days"] for r in rows) != len(preds):
        raise AssertionError("regime buckets are not exhaustive")
    return rows


def correlation_matrix(members: Sequence[MemberRecord]) -> dict:
    if len(members) < 2:
        raise ValueError("need at least two members")
    n = len(members)
    mat = np.eye(n)
    same, diff = [], []
    for i in range(n):
        for j in range(i + 1, n):
            r = prediction_correlation(members[i].labels, members[j].labels)
            mat[i, j] = mat[j, i] = r
            (same if members[i].architecture == members[j].architecture else diff).append(r)
    upper = mat[np.triu_indices(n, 1)]
    return {
        "names": [m.name for m in members],
        "matrix": mat,
        "mean": float(upper.mean()),
        "same_architecture_mean": float(np.mean(same)) if same else None,
        "different_architecture_mean": float(np.mean(diff)) if diff else None,
    }


def ablation_run(config, jobs: int = 1) -> list:
    """Retrain models with quantum columns active and then zeroed.

    Seeds and window assembly are identical between the two runs. Models come
    from the config's ablation list, or else the top-ranked members. Returns one
    row per model: accuracies without and with, the gain and a paired McNemar p.
    """
    from .pipeline import ablation_rows, prepare_instruments, train_members

    ctx = prepare_instruments(config, quantum=True)
    results = train_members(ctx, config, jobs)
    return ablation_rows(ctx, config, results, jobs)
