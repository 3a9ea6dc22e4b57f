"""Hourly electricity price series: CSV ingestion, train/eval split, synthesis.

Prices are stored raw (currency per MWh); normalization for the control
environment happens downstream so that ingestion stays lossless. A series
loaded from CSV or synthesized is gap-free at 1-hour resolution. The
calendar split (days 1-20 of each month for training, the rest for
evaluation) produces subseries that keep their original timestamps but are
no longer contiguous at month boundaries; all downstream consumers index
positionally, so this only matters to code that inspects timestamps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import (
    DuplicateTimestamp,
    GapDetected,
    IndexOutOfRange,
    InvalidParam,
    MalformedRow,
    NonFinitePrice,
)

HOUR = timedelta(hours=1)


@dataclass(frozen=True)
class PricePoint:
    timestamp: datetime  # UTC, hour-aligned
    price: float


@dataclass(frozen=True)
class PriceSeries:
    """Ordered hourly prices. Immutable; safe to share across workers."""

    timestamps: tuple[datetime, ...]
    prices: np.ndarray = field(repr=False)  # float64, same length

    def __post_init__(self):
        if len(self.timestamps) == 0:
            raise InvalidParam("price series must be non-empty")
        if len(self.timestamps) != len(self.prices):
            raise InvalidParam("timestamps and prices differ in length")

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def points(self) -> list[PricePoint]:
        return [PricePoint(t, float(p)) for t, p in zip(self.timestamps, self.prices)]

    def mean_price(self) -> float:
        return float(np.mean(self.prices))

    def is_weekend(self, i: int) -> bool:
        return self.timestamps[i].weekday() >= 5

    def day_starts(self, margin_hours: int = 0) -> list[int]:
        """Indices of midnight hours with at least `margin_hours` of series left."""
        return [
            i
            for i, t in enumerate(self.timestamps)
            if t.hour == 0 and i + margin_hours <= len(self)
        ]

    def check_contiguous(self) -> None:
        for i in range(1, len(self.timestamps)):
            prev, cur = self.timestamps[i - 1], self.timestamps[i]
            if cur == prev:
                raise DuplicateTimestamp(f"duplicate timestamp {cur.isoformat()}")
            if cur - prev != HOUR:
                missing = prev + HOUR
                raise GapDetected(f"missing hour {missing.isoformat()}")


@dataclass(frozen=True)
class PriceSplit:
    train: PriceSeries
    eval: PriceSeries | None  # None when every day falls in the training part


def _parse_row(line_no: int, row: list[str]) -> tuple[datetime, float]:
    if len(row) != 2:
        raise MalformedRow(line_no, f"expected 2 fields, got {len(row)}")
    try:
        ts = datetime.fromisoformat(row[0].strip())
    except ValueError as exc:
        raise MalformedRow(line_no, f"bad timestamp {row[0]!r}: {exc}") from None
    if ts.tzinfo is not None:
        ts = ts.replace(tzinfo=None)  # treat as UTC wall time
    if ts.minute != 0 or ts.second != 0 or ts.microsecond != 0:
        raise MalformedRow(line_no, f"timestamp {row[0]!r} is not hour-aligned")
    try:
        price = float(row[1])
    except ValueError:
        raise MalformedRow(line_no, f"bad price {row[1]!r}") from None
    if not math.isfinite(price):
        raise NonFinitePrice(f"line {line_no}: non-finite price {row[1]!r}")
    return ts, price


def load_csv(path) -> PriceSeries:
    """Load an hourly price CSV with header ``timestamp,price``.

    Rows are sorted by timestamp; the result must be gap-free at 1-hour
    resolution. Raises MalformedRow / GapDetected / DuplicateTimestamp /
    NonFinitePrice accordingly.
    """
    rows: list[tuple[datetime, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(1, "empty file") from None
        if [h.strip().lower() for h in header] != ["timestamp", "price"]:
            raise MalformedRow(1, f"expected header 'timestamp,price', got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            rows.append(_parse_row(line_no, row))
    if not rows:
        raise MalformedRow(2, "no data rows")
    rows.sort(key=lambda r: r[0])
    series = PriceSeries(
        timestamps=tuple(r[0] for r in rows),
        prices=np.array([r[1] for r in rows], dtype=np.float64),
    )
    series.check_contiguous()
    return series


def split_train_eval(series: PriceSeries) -> PriceSplit:
    """Calendar split: day-of-month 1-20 goes to train, 21+ to evaluation.

    Relative order is preserved within each part; together the parts hold
    exactly the source timestamps. The eval part is None for series that
    never reach day 21.
    """
    train_idx = [i for i, t in enumerate(series.timestamps) if t.day <= 20]
    eval_idx = [i for i, t in enumerate(series.timestamps) if t.day > 20]
    train = PriceSeries(
        timestamps=tuple(series.timestamps[i] for i in train_idx),
        prices=series.prices[train_idx].copy(),
    )
    eval_part = None
    if eval_idx:
        eval_part = PriceSeries(
            timestamps=tuple(series.timestamps[i] for i in eval_idx),
            prices=series.prices[eval_idx].copy(),
        )
    return PriceSplit(train=train, eval=eval_part)


def synthesize_prices(
    seed: int,
    days: int,
    base: float = 30.0,
    amplitude: float = 15.0,
    noise_sd: float = 2.0,
    start: datetime = datetime(2017, 1, 1),
) -> PriceSeries:
    """Deterministic stand-in for real ISO price exports.

    price(h) = base + amplitude * sin(2*pi*(h mod 24 - 6)/24) + N(0, noise_sd^2),
    floored at zero. The daily sinusoid peaks at hour 12 and bottoms out at
    hour 0. Identical arguments give a bit-identical series.
    """
    if days < 1:
        raise InvalidParam(f"days must be >= 1, got {days}")
    if amplitude < 0:
        raise InvalidParam(f"amplitude must be >= 0, got {amplitude}")
    if noise_sd < 0:
        raise InvalidParam(f"noise_sd must be >= 0, got {noise_sd}")
    n = days * 24
    rng = np.random.default_rng(seed)
    h = np.arange(n, dtype=np.float64)
    values = base + amplitude * np.sin(2.0 * np.pi * ((h % 24.0) - 6.0) / 24.0)
    values = values + rng.normal(0.0, noise_sd, size=n)
    values = np.maximum(values, 0.0)
    timestamps = tuple(start + HOUR * i for i in range(n))
    return PriceSeries(timestamps=timestamps, prices=values)


def window(series: PriceSeries, t: int, n: int) -> np.ndarray:
    """Prices for hours t-n..t as a length n+1 vector.

    Hours before the start of the series are padded by repeating the first
    available price (stationarity assumption for the opening hours).
    """
    if t < 0 or t >= len(series):
        raise IndexOutOfRange(f"hour index {t} outside series of length {len(series)}")
    lo = t - n
    if lo >= 0:
        return series.prices[lo : t + 1].copy()
    pad = np.full(-lo, series.prices[0])
    return np.concatenate([pad, series.prices[: t + 1]])


def write_csv(series: PriceSeries, path) -> None:
    """Inverse of load_csv (timestamps as ``YYYY-MM-DDTHH:00``)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "price"])
        for ts, p in zip(series.timestamps, series.prices):
            writer.writerow([ts.strftime("%Y-%m-%dT%H:%M"), repr(float(p))])
