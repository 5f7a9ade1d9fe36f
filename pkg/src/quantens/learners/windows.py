"""Lookback windows over a feature matrix, standardisation, and predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import SplitSpec
from ..features import FeatureMatrix


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class WindowedDataset:
    """Windows ending at ``target_index``; row k covers days [t-L+1, t].

    ``labels[k]`` is the direction from day t to t+1 (0 if not yet known).
    """

    sequences: np.ndarray  # (N, L, d)
    labels: np.ndarray
    target_index: np.ndarray
    L: int

    @property
    def flat(self) -> np.ndarray:
        return self.sequences.reshape(len(self.sequences), -1)

    def __len__(self) -> int:
        return len(self.target_index)

    def subset(self, mask) -> "WindowedDataset":
        return WindowedDataset(self.sequences[mask], self.labels[mask], self.target_index[mask], self.L)


def windows_at(matrix: FeatureMatrix, L: int, targets) -> WindowedDataset:
    targets = np.asarray(targets, dtype=np.int64)
    if len(targets) and (targets.min() - L + 1 < matrix.valid_from or targets.max() >= len(matrix)):
        raise InsufficientData("window reaches outside the populated feature rows")
    offsets = np.arange(-L + 1, 1)
    seqs = matrix.X[targets[:, None] + offsets[None, :]] if len(targets) else np.empty((0, L, matrix.X.shape[1]))
    return WindowedDataset(seqs, np.asarray(matrix.y)[targets].astype(np.int8), targets, L)


def train_targets(matrix: FeatureMatrix, L: int, boundary: int) -> np.ndarray:
    # A training label looks one day ahead, so its close must precede the boundary.
    return np.arange(matrix.valid_from + L - 1, boundary - 1)


def test_targets(matrix: FeatureMatrix, L: int, boundary: int, require_labels: bool = True) -> np.ndarray:
    last = len(matrix) - 1 if require_labels else len(matrix)
    return np.arange(max(boundary, matrix.valid_from + L - 1), last)


def assemble_windows(matrix: FeatureMatrix, L: int, split: SplitSpec, require_labels: bool = True):
    """Train and test windows for lookback ``L`` on either side of ``split``.

    Test windows may look back across the boundary for features; their
    targets (and so their labels) are all on the test side. Without
    ``require_labels`` the test set extends to the final day.
    """
    b = split.boundary_index
    tr = train_targets(matrix, L, b)
    te = test_targets(matrix, L, b, require_labels)
    if len(tr) < 2:
        raise InsufficientData(f"only {len(tr)} training windows for lookback {L}")
    if len(te) < 1:
        raise InsufficientData(f"no test windows for lookback {L}")
    return {"train": windows_at(matrix, L, tr), "test": windows_at(matrix, L, te)}


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            raise ValueError("cannot standardise an empty training set")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        flat = std < 1e-12
        # Degenerate columns pass through untouched.
        return cls(np.where(flat, 0.0, mean), np.where(flat, 1.0, std))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def standardize(train_features) -> Standardizer:
    return Standardizer.fit(train_features)


def apply_standardize(stats: Standardizer, features) -> np.ndarray:
    return stats.transform(features)


@dataclass(frozen=True)
class Prediction:
    p_up: float
    label: int
    confidence: float

    @classmethod
    def from_proba(cls, p: float) -> "Prediction":
        p = float(p)
        return cls(p, 1 if p >= 0.5 else -1, 2.0 * abs(p - 0.5))


def labels_from_proba(p) -> np.ndarray:
    return np.where(np.asarray(p) >= 0.5, 1, -1).astype(np.int8)


def confidence_from_proba(p) -> np.ndarray:
    return 2.0 * np.abs(np.asarray(p, dtype=float) - 0.5)
