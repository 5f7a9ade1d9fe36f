"""Turn ensemble direction calls into a costed, consensus-gated equity curve."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class BacktestError(ValueError):
    pass


@dataclass(frozen=True)
class BacktestConfig:
    cost: float = 0.0002  # per traded day (one round trip)
    consensus: int = 6
    sizing: str = "full"  # or "confidence"
    long_only: bool = False
    annualization: int = 252

    def __post_init__(self):
        if not (self.cost >= 0 and math.isfinite(self.cost)):
            raise BacktestError("cost must be finite and >= 0")
        if self.consensus < 0:
            raise BacktestError("consensus threshold must be >= 0")
        if self.sizing not in ("full", "confidence"):
            raise BacktestError(f"unknown sizing {self.sizing!r}")
        if self.annualization < 1:
            raise BacktestError("annualization must be >= 1")


def expected_daily_return(accuracy: float, mean_abs_move: float, cost: float) -> float:
    """Edge per day from a hit rate, an average absolute move and a cost."""
    for v in (accuracy, mean_abs_move, cost):
        if not math.isfinite(v):
            raise BacktestError("inputs must be finite")
    if not 0.0 <= accuracy <= 1.0:
        raise BacktestError("accuracy must lie in [0, 1]")
    return accuracy * mean_abs_move - (1.0 - accuracy) * mean_abs_move - cost


@dataclass(frozen=True)
class EquityCurve:
    dates: tuple
    position: np.ndarray
    gross: np.ndarray
    net: np.ndarray
    equity: np.ndarray  # len(dates) + 1, starts at 1
    hits: np.ndarray  # per traded day, True if the call was right

    @property
    def trades(self) -> int:
        return int(np.count_nonzero(self.position))

    def summary(self, annualization: int = 252) -> dict:
        try:
            sr = sharpe(self.net, annualization)
        except BacktestError:
            sr = None
        return {
            "days": len(self.dates),
            "trades": self.trades,
            "hit_rate": float(self.hits.mean()) if len(self.hits) else None,
            "total_return": float(self.equity[-1] - 1.0),
            "sharpe": sr,
            "max_drawdown": max_drawdown(self.equity),
        }

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "position", "gross", "net", "equity"])
            for i, d in enumerate(self.dates):
                w.writerow([d.isoformat(), repr(float(self.position[i])), repr(float(self.gross[i])),
                            repr(float(self.net[i])), repr(float(self.equity[i + 1]))])

    def write_summary(self, path, config: BacktestConfig | None = None) -> None:
        doc = self.summary((config or BacktestConfig()).annualization)
        if config is not None:
            doc["config"] = asdict(config)
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def simulate(pred_dates: Sequence, labels, agree_count, close_dates: Sequence, closes,
             config: BacktestConfig = BacktestConfig(), confidence=None) -> EquityCurve:
    """Enter at the close of each prediction day, exit at the next close.

    A day trades only if ``agree_count >= config.consensus``. Returns compound
    multiplicatively; each traded day pays ``cost`` (scaled by position size).
    """
    labels = np.asarray(labels)
    agree = np.asarray(agree_count)
    closes = np.asarray(closes, dtype=float)
    n = len(pred_dates)
    if labels.shape != (n,) or agree.shape != (n,):
        raise BacktestError("labels and agree counts must match the prediction dates")
    if len(close_dates) != len(closes):
        raise BacktestError("close dates and closes differ in length")
    where = {d: i for i, d in enumerate(close_dates)}
    idx = np.empty(n, dtype=np.int64)
    for k, d in enumerate(pred_dates):
        i = where.get(d)
        if i is None:
            raise BacktestError(f"prediction date {d} has no close")
        if i + 1 >= len(closes):
            raise BacktestError(f"prediction date {d} has no next-day close")
        idx[k] = i
    if n > 1 and np.any(np.diff(idx) <= 0):
        raise BacktestError("prediction dates are not strictly increasing")

    size = np.ones(n) if config.sizing == "full" else np.asarray(confidence, dtype=float)
    if size.shape != (n,):
        raise BacktestError("confidence sizing needs one confidence per day")
    r = closes[idx + 1] / closes[idx] - 1.0
    trade = agree >= config.consensus
    if config.long_only:
        trade &= labels > 0
    position = np.where(trade, labels * size, 0.0)
    gross = position * r
    net = np.where(trade, gross - config.cost * np.abs(position), 0.0)
    equity = np.empty(n + 1)
    equity[0] = 1.0
    for t in range(n):
        equity[t + 1] = equity[t] * (1.0 + net[t])
    realized = np.where(r > 0, 1, -1)
    hits = (labels == realized)[trade]
    return EquityCurve(tuple(pred_dates), position, gross, net, equity, hits)


def sharpe(net_returns, annualization: int = 252) -> float:
    """Annualised mean over sample standard deviation, zero risk-free rate."""
    x = np.asarray(net_returns, dtype=float)
    if len(x) < 2:
        raise BacktestError("Sharpe needs at least two observations")
    if np.all(x == x[0]):
        raise BacktestError("Sharpe undefined for zero-variance returns")
    sd = x.std(ddof=1)
    return float(x.mean() / sd * math.sqrt(annualization))


def max_drawdown(equity) -> float:
    e = np.asarray(equity, dtype=float)
    if len(e) == 0 or np.any(e <= 0):
        raise BacktestError("equity must be non-empty and positive")
    peak = np.maximum.accumulate(e)
    return float(np.max(1.0 - e / peak))
