"""Causal technical features, quantum-circuit inputs and direction labels.

Every series function returns an array aligned with its input where
positions without enough history hold NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import OhlcvSeries

FEATURE_NAMES = (
    "ret",
    "log_ret",
    "vol_5",
    "vol_10",
    "vol_20",
    "mom_3",
    "mom_5",
    "mom_10",
    "close_sma_5",
    "close_sma_10",
    "close_sma_20",
    "close_ema_5",
    "close_ema_10",
    "close_ema_20",
    "bb_upper_gap",
    "bb_lower_gap",
    "bb_percent_b",
    "bb_width",
    "rsi_14",
    "volume_z_20",
    "hl_range",
    "close_open_ret",
    "mean_ret_5",
    "mean_ret_10",
    "sma_5_20",
    "q_sentiment",
    "q_sentiment_3d",
)
N_FEATURES = len(FEATURE_NAMES)
QUANTUM_COLUMNS = (N_FEATURES - 2, N_FEATURES - 1)
LONGEST_WINDOW = 20
QUANTUM_INPUT_NAMES = ("mean_ret_5", "vol_10", "mom_5", "ret")


class FeatureError(ValueError):
    pass


def _pad(values: np.ndarray, n: int) -> np.ndarray:
    out = np.full(n, np.nan)
    out[n - len(values):] = values
    return out


def _rolling_mean_std(x: np.ndarray, w: int):
    """Rolling mean and population std over trailing windows of length ``w``.

    Deviations are taken from each window's first element so a constant
    window yields exactly zero spread.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < w:
        return np.full(n, np.nan), np.full(n, np.nan)
    win = sliding_window_view(x, w)
    d = win - win[:, :1]
    m = d.mean(axis=1)
    sd = np.sqrt(((d - m[:, None]) ** 2).mean(axis=1))
    return _pad(win[:, 0] + m, n), _pad(sd, n)


def returns(closes):
    """Simple and log returns; index 0 is NaN."""
    c = np.asarray(closes, dtype=float)
    simple = np.full(len(c), np.nan)
    log = np.full(len(c), np.nan)
    simple[1:] = (c[1:] - c[:-1]) / c[:-1]
    log[1:] = np.log(c[1:] / c[:-1])
    return {"simple": simple, "log": log}


def rolling_volatility(rets, w: int) -> np.ndarray:
    """Population (divide-by-w) standard deviation of the last ``w`` returns."""
    if w < 2:
        raise ValueError("volatility window must be >= 2")
    return _rolling_mean_std(rets, w)[1]


def rolling_mean(x, w: int) -> np.ndarray:
    return _rolling_mean_std(x, w)[0]


def momentum(closes, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("momentum horizon must be >= 1")
    c = np.asarray(closes, dtype=float)
    out = np.full(len(c), np.nan)
    out[k:] = (c[k:] - c[:-k]) / c[:-k]
    return out


def sma(closes, w: int) -> np.ndarray:
    if w < 1:
        raise ValueError("window must be >= 1")
    return _rolling_mean_std(closes, w)[0]


def ema(closes, w: int, alpha: float | None = None) -> np.ndarray:
    """EMA seeded with the SMA of the first ``w`` closes; ``alpha`` defaults to 2/(w+1)."""
    if w < 1:
        raise ValueError("window must be >= 1")
    c = np.asarray(closes, dtype=float)
    a = 2.0 / (w + 1) if alpha is None else float(alpha)
    out = np.full(len(c), np.nan)
    if len(c) < w:
        return out
    prev = sma(c[:w], w)[w - 1]
    out[w - 1] = prev
    for t in range(w, len(c)):
        prev = a * c[t] + (1.0 - a) * prev
        out[t] = prev
    return out


def rsi(closes, period: int = 14) -> np.ndarray:
    """RSI from simple averages of gains and losses over ``period`` changes."""
    if period < 1:
        raise ValueError("period must be >= 1")
    c = np.asarray(closes, dtype=float)
    out = np.full(len(c), np.nan)
    if len(c) <= period:
        return out
    diff = np.diff(c)
    win = sliding_window_view(diff, period)
    gain = np.where(win > 0, win, 0.0).mean(axis=1)
    loss = np.where(win < 0, -win, 0.0).mean(axis=1)
    val = np.empty(len(gain))
    both_zero = (gain == 0) & (loss == 0)
    no_loss = (loss == 0) & ~both_zero
    rest = ~(both_zero | no_loss)
    val[both_zero] = 50.0
    val[no_loss] = 100.0
    val[rest] = 100.0 - 100.0 / (1.0 + gain[rest] / loss[rest])
    out[period:] = val
    return out


def bollinger(closes, w: int = 20, k_sigma: float = 2.0) -> dict:
    if w < 2:
        raise ValueError("window must be >= 2")
    c = np.asarray(closes, dtype=float)
    mid, sd = _rolling_mean_std(c, w)
    upper = mid + k_sigma * sd
    lower = mid - k_sigma * sd
    width = upper - lower
    pct = np.full(len(c), np.nan)
    ok = width > 0
    pct[ok] = (c[ok] - lower[ok]) / width[ok]
    return {"upper": upper, "middle": mid, "lower": lower, "percent_b": pct}


def make_labels(closes) -> np.ndarray:
    """+1 where the next close is strictly higher, -1 otherwise; last entry is 0 (unlabeled)."""
    c = np.asarray(closes, dtype=float)
    if len(c) < 2:
        raise ValueError("need at least 2 closes")
    y = np.zeros(len(c), dtype=np.int8)
    y[:-1] = np.where(c[1:] > c[:-1], 1, -1)
    return y


@dataclass(frozen=True)
class FeatureMatrix:
    dates: tuple
    X: np.ndarray
    y: np.ndarray
    valid_from: int
    feature_names: tuple = FEATURE_NAMES
    symbol: str = ""
    quantum: bool = field(default=False)

    def __len__(self) -> int:
        return len(self.dates)

    def to_csv(self, path) -> None:
        """Write features plus label with 12 significant digits."""
        lines = [",".join(self.feature_names + ("label",))]
        for t in range(len(self)):
            vals = [format(v, ".12g") for v in self.X[t]]
            vals.append(str(int(self.y[t])) if self.y[t] != 0 else "")
            lines.append(",".join(vals))
        Path(path).write_text("\n".join(lines) + "\n")


def _classical_columns(series: OhlcvSeries) -> list:
    c, o, h, lo, v = series.close, series.open, series.high, series.low, series.volume
    r = returns(c)
    ret = r["simple"]
    cols = [ret, r["log"]]
    cols += [rolling_volatility(ret, w) for w in (5, 10, 20)]
    cols += [momentum(c, k) for k in (3, 5, 10)]
    smas = {w: sma(c, w) for w in (5, 10, 20)}
    cols += [c / smas[w] for w in (5, 10, 20)]
    cols += [c / ema(c, w) for w in (5, 10, 20)]
    bb = bollinger(c, 20, 2.0)
    pct = bb["percent_b"]
    # Zero-width band: the close sits on the middle line.
    pct = np.where(np.isnan(pct) & ~np.isnan(bb["middle"]), 0.5, pct)
    cols += [bb["upper"] / c - 1.0, bb["lower"] / c - 1.0, pct, (bb["upper"] - bb["lower"]) / bb["middle"]]
    cols.append(rsi(c, 14))
    vmean, vstd = _rolling_mean_std(v, 20)
    vz = np.where(vstd > 0, (v - vmean) / np.where(vstd > 0, vstd, 1.0), 0.0)
    vz[np.isnan(vmean)] = np.nan
    cols.append(vz)
    cols.append((h - lo) / c)
    cols.append(c / o - 1.0)
    cols.append(rolling_mean(ret, 5))
    cols.append(rolling_mean(ret, 10))
    cols.append(smas[5] / smas[20])
    return cols


def build_feature_matrix(series: OhlcvSeries, sentiment=None) -> FeatureMatrix:
    """Assemble the 27 named features in fixed order.

    Without ``sentiment`` the two quantum columns are all zeros.
    """
    n = len(series)
    if n < LONGEST_WINDOW + 1:
        raise FeatureError(f"{series.symbol}: need at least {LONGEST_WINDOW + 1} rows, got {n}")
    cols = _classical_columns(series)
    if sentiment is None:
        cols += [np.zeros(n), np.zeros(n)]
    else:
        s = np.asarray(sentiment, dtype=float)
        if s.shape != (n,):
            raise FeatureError("sentiment length does not match series")
        cols += [s, rolling_mean(s, 3)]
    X = np.column_stack(cols)
    finite = np.isfinite(X).all(axis=1)
    bad = np.flatnonzero(~finite)
    valid_from = int(bad[-1] + 1) if len(bad) else 0
    if valid_from >= n:
        raise FeatureError(f"{series.symbol}: no fully populated rows")
    X.setflags(write=False)
    y = make_labels(series.close)
    y.setflags(write=False)
    return FeatureMatrix(series.dates, X, y, valid_from, FEATURE_NAMES, series.symbol, sentiment is not None)


def raw_quantum_features(series: OhlcvSeries) -> np.ndarray:
    """(T, 4) array: 5-day mean return, 10-day volatility, 5-day momentum, current return."""
    ret = returns(series.close)["simple"]
    return np.column_stack(
        [rolling_mean(ret, 5), rolling_volatility(ret, 10), momentum(series.close, 5), ret]
    )


def quantum_inputs(series: OhlcvSeries, train_boundary: int):
    """Min-max scale the four circuit inputs using training rows only.

    Returns ``(inputs, valid_from)``; rows before ``valid_from`` are NaN and
    later rows are clamped to [0, 1]. A component with zero training range
    is fixed at 0.5.
    """
    raw = raw_quantum_features(series)
    finite = np.isfinite(raw).all(axis=1)
    bad = np.flatnonzero(~finite)
    valid_from = int(bad[-1] + 1) if len(bad) else 0
    if not valid_from < train_boundary <= len(series):
        raise FeatureError("train boundary leaves no rows for quantum input scaling")
    train = raw[valid_from:train_boundary]
    lo = train.min(axis=0)
    hi = train.max(axis=0)
    span = hi - lo
    out = np.full_like(raw, np.nan)
    rows = slice(valid_from, None)
    for j in range(4):
        if span[j] > 0:
            out[rows, j] = np.clip((raw[rows, j] - lo[j]) / span[j], 0.0, 1.0)
        else:
            out[rows, j] = 0.5
    return out, valid_from
