"""Quality filtering and aggregation of member predictions.

Weighted votes take their sign from the exact value of the weighted sum
(rational arithmetic when the float sum is too close to zero to trust), so
results never depend on member order. ``sign(0) = +1`` everywhere.
"""

from __future__ import annotations

import csv
import math
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STRATEGY_KINDS = ("TopK", "ConfidenceWeighted", "MajorityVote", "AccuracyWeighted",
                  "DatasetSpecific", "AdaptiveDynamic", "Naive")


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class MemberRecord:
    """One fitted (dataset, architecture) pair and its test-axis predictions."""

    symbol: str
    architecture: str
    accuracy: float
    p_up: np.ndarray
    target_index: np.ndarray = field(default=None)

    def __post_init__(self):
        p = np.asarray(self.p_up, dtype=float)
        object.__setattr__(self, "p_up", p)
        if self.target_index is None:
            object.__setattr__(self, "target_index", np.arange(len(p)))
        if not 0.0 <= self.accuracy <= 1.0:
            raise EnsembleError(f"{self.name}: accuracy {self.accuracy} outside [0, 1]")

    @property
    def id(self) -> tuple:
        return (self.symbol, self.architecture)

    @property
    def name(self) -> str:
        return f"{self.symbol}_{self.architecture}"

    @property
    def labels(self) -> np.ndarray:
        return np.where(self.p_up >= 0.5, 1, -1)

    @property
    def confidence(self) -> np.ndarray:
        return 2.0 * np.abs(self.p_up - 0.5)


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    k: int = 7
    filter_threshold: float = 0.52
    architecture: str | None = None
    window: int = 30

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise EnsembleError(f"unknown strategy {self.kind!r}")
        if self.k < 1:
            raise EnsembleError("k must be >= 1")
        if not 0.5 <= self.filter_threshold < 1.0:
            raise EnsembleError("filter threshold must lie in [0.5, 1)")
        if self.kind == "DatasetSpecific" and not self.architecture:
            raise EnsembleError("DatasetSpecific needs an architecture")
        if self.window < 1:
            raise EnsembleError("adaptive window must be >= 1")

    @property
    def id(self) -> str:
        if self.kind == "TopK":
            return f"TopK-{self.k}"
        if self.kind == "DatasetSpecific":
            return f"Dataset-{self.architecture}"
        return self.kind


@dataclass(frozen=True)
class EnsembleOutput:
    strategy: str
    roster: tuple
    label: np.ndarray
    tally: np.ndarray
    agree_count: np.ndarray
    score: np.ndarray
    target_index: np.ndarray

    @property
    def roster_size(self) -> int:
        return len(self.roster)

    def to_csv(self, path, dates: Sequence) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "strategy", "label", "score", "agree_count", "roster_size"])
            for i, t in enumerate(self.target_index):
                w.writerow([dates[t].isoformat(), self.strategy, int(self.label[i]),
                            repr(float(self.score[i])), int(self.agree_count[i]), self.roster_size])


def sign(x) -> int:
    return 1 if x >= 0 else -1


def smart_filter(members: Sequence[MemberRecord], threshold: float = 0.52) -> list:
    """Members whose accuracy strictly exceeds ``threshold``, in input order."""
    if not members:
        raise EnsembleError("no members to filter")
    return [m for m in members if m.accuracy > threshold]


def rank(members: Sequence[MemberRecord]) -> list:
    """Highest accuracy first; ties go to the lexicographically smaller id."""
    return sorted(members, key=lambda m: (-m.accuracy, m.id))


def top_k(members: Sequence[MemberRecord], k: int) -> list:
    if k > len(members):
        raise EnsembleError(f"k={k} exceeds the {len(members)} available members")
    return rank(members)[:k]


def majority_vote(labels: Sequence[int]) -> int:
    if len(labels) == 0:
        raise EnsembleError("majority vote needs at least one member")
    return sign(sum(int(v) for v in labels))


def signed_sum(factors: Sequence[tuple], labels: Sequence[int]) -> tuple:
    """Sign and value of sum_i prod(factors[i]) * labels[i].

    The float sum is trusted only when it clears its rounding error bound;
    otherwise the sign comes from exact rational arithmetic.
    """
    terms = [math.prod(fs) * int(f) for fs, f in zip(factors, labels)]
    score = math.fsum(terms)
    bound = 1e-12 * math.fsum(abs(t) for t in terms)
    if abs(score) > bound:
        return sign(score), score
    exact = sum((math.prod(Fraction(v) for v in fs) * int(f) for fs, f in zip(factors, labels)), Fraction(0))
    return sign(exact), float(exact)


def weighted_vote(weights: Sequence[float], labels: Sequence[int]) -> tuple:
    return signed_sum([(float(w),) for w in weights], labels)


def confidence_weighted(accuracies, confidences, labels) -> int:
    return signed_sum([(float(a), float(c)) for a, c in zip(accuracies, confidences)], labels)[0]


def accuracy_weighted(accuracies, labels) -> int:
    return weighted_vote(accuracies, labels)[0]


def adaptive_weights(correct: np.ndarray, t: int, window: int = 30) -> np.ndarray:
    """Share of the ``window`` days before ``t`` on which each member was right.

    ``correct`` is a (members, days) boolean matrix. Needs ``t >= window``.
    """
    if t < window:
        raise EnsembleError("adaptive weights need a full window of history")
    return correct[:, t - window:t].sum(axis=1) / window


def dataset_specific(members: Sequence[MemberRecord], architecture: str) -> "EnsembleOutput":
    return run_strategy(StrategyConfig("DatasetSpecific", architecture=architecture), members)


def _check_axis(members):
    axis = members[0].target_index
    for m in members[1:]:
        if not np.array_equal(m.target_index, axis):
            raise EnsembleError(f"{m.name} is not on the same prediction axis as {members[0].name}")
    return axis


def run_strategy(config: StrategyConfig, members: Sequence[MemberRecord], labels=None, days=None) -> EnsembleOutput:
    """Filter (where the strategy calls for it) and aggregate day by day.

    ``labels`` (realised +/-1 per axis day) is required by AdaptiveDynamic.
    For TopK the effective K is ``min(k, qualifying members)``.
    """
    if not members:
        raise EnsembleError("no members")
    axis = _check_axis(members)
    kind = config.kind
    if kind == "DatasetSpecific":
        roster = [m for m in members if m.architecture == config.architecture]
        if not roster:
            raise EnsembleError(f"no members with architecture {config.architecture}")
    elif kind == "Naive":
        roster = list(members)
    else:
        roster = smart_filter(members, config.filter_threshold)
        if not roster:
            raise EnsembleError("no qualifying members")
        if kind == "TopK":
            roster = top_k(roster, min(config.k, len(roster)))
    roster = sorted(roster, key=lambda m: m.id)

    F = np.array([m.labels for m in roster])  # (members, days)
    acc = [m.accuracy for m in roster]
    n_days = F.shape[1]
    sel = np.arange(n_days) if days is None else np.arange(n_days)[days]

    if kind == "AdaptiveDynamic":
        if labels is None:
            raise EnsembleError("AdaptiveDynamic needs realised labels")
        labels = np.asarray(labels)
        if labels.shape != (n_days,):
            raise EnsembleError("labels do not match the prediction axis")
        correct = F == labels[None, :]
        # Integer counts keep the day's sign exact.
        csum = np.concatenate([np.zeros((len(roster), 1), dtype=np.int64),
                               np.cumsum(correct, axis=1, dtype=np.int64)], axis=1)

    out_label, out_tally, out_agree, out_score = [], [], [], []
    for t in sel:
        f = F[:, t]
        if kind in ("TopK", "MajorityVote", "DatasetSpecific", "Naive"):
            score = float(f.sum())
            lab = sign(score)
        elif kind == "AccuracyWeighted":
            lab, score = weighted_vote(acc, f)
        elif kind == "ConfidenceWeighted":
            lab, score = signed_sum([(a, float(m.confidence[t])) for a, m in zip(acc, roster)], f)
        else:  # AdaptiveDynamic
            if t >= config.window:
                counts = csum[:, t] - csum[:, t - config.window]
                num = int(np.dot(counts, f))
                lab, score = sign(num), num / config.window
            else:
                lab, score = weighted_vote(acc, f)
        out_label.append(lab)
        out_score.append(score)
        out_tally.append(int(f.sum()))
        out_agree.append(int(np.sum(f == lab)))
    return EnsembleOutput(
        strategy=config.id,
        roster=tuple(m.id for m in roster),
        label=np.array(out_label, dtype=np.int8),
        tally=np.array(out_tally),
        agree_count=np.array(out_agree),
        score=np.array(out_score, dtype=float),
        target_index=np.asarray(axis)[sel],
    )


def prediction_correlation(a, b) -> float:
    """Pearson correlation of two +/-1 series (the phi coefficient)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise EnsembleError("need two aligned series of length >= 2")
    ca, cb = a.std() == 0, b.std() == 0
    if ca and cb:
        if np.array_equal(a, b):
            return 1.0
        raise EnsembleError("correlation undefined for two different constant series")
    if ca or cb:
        raise EnsembleError("correlation undefined when one series is constant")
    da = a - a.mean()
    db = b - b.mean()
    r = float(np.dot(da, db) / math.sqrt(np.dot(da, da) * np.dot(db, db)))
    return max(-1.0, min(1.0, r))
