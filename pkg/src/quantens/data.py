"""Market data ingest, calendar alignment, synthetic generation and splitting."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

CSV_HEADER = ["date", "open", "high", "low", "close", "volume"]
MOMENTUM_HORIZON = 5


class DataError(ValueError):
    """Base class for market data problems."""


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class AlignmentError(DataError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class OhlcvSeries:
    """Daily bars for one instrument. Arrays are read-only."""

    symbol: str
    dates: tuple
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        for name in ("open", "high", "low", "close", "volume"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "dates", tuple(self.dates))
        n = len(self.dates)
        for name in ("open", "high", "low", "close", "volume"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{self.symbol}: column {name} has wrong length")

    def __len__(self) -> int:
        return len(self.dates)

    def validate(self) -> None:
        for i, (d0, d1) in enumerate(zip(self.dates, self.dates[1:])):
            if not d1 > d0:
                raise ValidationError(f"{self.symbol}: dates not strictly increasing at row {i + 1}")
        _check_bars(self.open, self.high, self.low, self.close, self.volume, self.symbol)

    def take(self, idx) -> "OhlcvSeries":
        idx = np.asarray(idx, dtype=int)
        return OhlcvSeries(
            self.symbol,
            tuple(self.dates[i] for i in idx),
            self.open[idx],
            self.high[idx],
            self.low[idx],
            self.close[idx],
            self.volume[idx],
        )

    def head(self, n: int) -> "OhlcvSeries":
        """First ``n`` rows (used to truncate history at a given day)."""
        return self.take(np.arange(min(n, len(self))))

    def equals(self, other: "OhlcvSeries") -> bool:
        return (
            self.symbol == other.symbol
            and self.dates == other.dates
            and all(
                np.array_equal(getattr(self, c), getattr(other, c))
                for c in ("open", "high", "low", "close", "volume")
            )
        )


def _check_bars(o, h, l, c, v, symbol, line_numbers=None):
    for i in range(len(c)):
        where = f"line {line_numbers[i]}" if line_numbers is not None else f"row {i}"
        prices = (o[i], h[i], l[i], c[i])
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise ValidationError(f"{symbol}: non-positive or non-finite price on {where}")
        if h[i] < max(o[i], c[i]) or l[i] > min(o[i], c[i]):
            raise ValidationError(f"{symbol}: inconsistent high/low on {where}")
        if not (math.isfinite(v[i]) and v[i] >= 0):
            raise ValidationError(f"{symbol}: negative or non-finite volume on {where}")


def load_ohlcv_csv(path, symbol: str | None = None) -> OhlcvSeries:
    """Read a ``date,open,high,low,close,volume`` file.

    Rows are sorted by date. Errors name the offending line of the file
    (the header is line 1).
    """
    path = Path(path)
    symbol = symbol or path.stem
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 6:
                raise ParseError(f"{path}: line {lineno}: expected 6 fields, got {len(rec)}")
            try:
                day = dt.date.fromisoformat(rec[0].strip())
                values = [float(f) for f in rec[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            rows.append((day, values, lineno))
    if not rows:
        raise ParseError(f"{path}: no data rows")

    arr = np.array([r[1] for r in rows])
    lines = [r[2] for r in rows]
    try:
        _check_bars(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], symbol, lines)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None

    order = sorted(range(len(rows)), key=lambda i: rows[i][0])
    dates = [rows[i][0] for i in order]
    for a, b in zip(order, order[1:]):
        if rows[a][0] == rows[b][0]:
            raise ValidationError(
                f"{path}: duplicate date {rows[b][0]} on lines {rows[a][2]} and {rows[b][2]}"
            )
    arr = arr[order]
    return OhlcvSeries(symbol, dates, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])


def write_ohlcv_csv(series: OhlcvSeries, path) -> None:
    # repr() gives the shortest string that round-trips a float exactly.
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, d in enumerate(series.dates):
            w.writerow(
                [d.isoformat()]
                + [repr(float(getattr(series, c)[i])) for c in CSV_HEADER[1:]]
            )


@dataclass(frozen=True)
class AlignedPanel:
    symbols: tuple
    dates: tuple
    series: dict

    def __getitem__(self, symbol: str) -> OhlcvSeries:
        return self.series[symbol]

    def __len__(self) -> int:
        return len(self.dates)


def align_calendars(series_list: Sequence[OhlcvSeries]) -> AlignedPanel:
    """Restrict every series to the dates common to all of them.

    Days missing from any instrument are dropped, never forward-filled.
    """
    if not series_list:
        raise AlignmentError("no series to align")
    symbols = [s.symbol for s in series_list]
    if len(set(symbols)) != len(symbols):
        raise AlignmentError(f"duplicate symbols: {symbols}")
    common = set(series_list[0].dates)
    for s in series_list[1:]:
        common &= set(s.dates)
    if not common:
        raise AlignmentError("calendars have no common dates")
    dates = tuple(sorted(common))
    out = {}
    for s in series_list:
        idx = [i for i, d in enumerate(s.dates) if d in common]
        out[s.symbol] = s if len(idx) == len(s) else s.take(idx)
    return AlignedPanel(tuple(symbols), dates, out)


def business_days(start: dt.date, n: int) -> list:
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")
    return [d.astype(object) for d in days]


def synth_ohlcv(
    n_days: int,
    regime_plan: Sequence[dict],
    signal_strength: float = 0.0,
    seed: int = 0,
    symbol: str = "SYN",
    start_price: float = 100.0,
    start_date: dt.date = dt.date(2020, 1, 2),
) -> OhlcvSeries:
    """Geometric random walk with planted, partially learnable direction.

    ``regime_plan`` is a list of ``{"length", "drift", "volatility"}`` dicts
    applied in order (the last one extends to cover ``n_days``). On every day
    with five days of history, the next move's direction is forced to the sign
    of the 5-day momentum with probability ``signal_strength``; otherwise the
    random-walk draw stands.
    """
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    if not regime_plan:
        raise ValueError("regime_plan must be non-empty")
    if not 0.0 <= signal_strength <= 1.0:
        raise ValueError("signal_strength must lie in [0, 1]")
    drift = np.empty(n_days)
    vol = np.empty(n_days)
    pos = 0
    for k, reg in enumerate(regime_plan):
        if reg["volatility"] <= 0:
            raise ValueError("regime volatility must be > 0")
        length = n_days - pos if k == len(regime_plan) - 1 else int(reg["length"])
        end = min(n_days, pos + max(length, 0))
        drift[pos:end] = reg["drift"]
        vol[pos:end] = reg["volatility"]
        pos = end
    if pos < n_days:
        drift[pos:] = regime_plan[-1]["drift"]
        vol[pos:] = regime_plan[-1]["volatility"]

    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n_days)
    u = rng.random(n_days)
    gap = rng.standard_normal(n_days)
    wick = np.abs(rng.standard_normal((n_days, 2)))
    vol_noise = rng.standard_normal(n_days)

    close = np.empty(n_days)
    close[0] = start_price
    for t in range(n_days - 1):
        r = drift[t] + vol[t] * z[t]
        if t >= MOMENTUM_HORIZON and u[t] < signal_strength:
            direction = 1.0 if close[t] >= close[t - MOMENTUM_HORIZON] else -1.0
            r = direction * max(abs(r), 1e-8)
        close[t + 1] = close[t] * math.exp(r)

    prev = np.concatenate(([close[0]], close[:-1]))
    open_ = prev * np.exp(0.2 * vol * gap)
    high = np.maximum(open_, close) * np.exp(0.5 * vol * wick[:, 0])
    low = np.minimum(open_, close) * np.exp(-0.5 * vol * wick[:, 1])
    volume = np.round(1e6 * np.exp(0.3 * vol_noise))
    return OhlcvSeries(symbol, business_days(start_date, n_days), open_, high, low, close, volume)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    boundary_index: int
    length: int

    @property
    def train(self) -> range:
        return range(0, self.boundary_index)

    @property
    def test(self) -> range:
        return range(self.boundary_index, self.length)


def temporal_split(length: int, train_fraction: float) -> SplitSpec:
    """Chronological split at ``floor(train_fraction * length)``."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if length < 2:
        raise ValueError("need at least 2 observations to split")
    # Decimal reading of the fraction avoids 0.29 * 100 -> 28.999...
    boundary = math.floor(Fraction(repr(float(train_fraction))) * length)
    if boundary < 1 or boundary >= length:
        raise ValueError(f"degenerate split: boundary {boundary} for length {length}")
    return SplitSpec(float(train_fraction), boundary, length)
