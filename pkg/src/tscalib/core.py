"""Series and forecast data model shared by every other module.

Positions are integer indices into ``TimeSeries.values``; timestamps are
metadata only. A forecast window with origin ``T`` uses the context
``values[T - context_len + 1 : T + 1]`` and targets ``values[T + 1 : T + 1 + H]``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

LEVEL_ATOL = 1e-9


class TSCalibError(Exception):
    """Base class for all toolkit errors."""


class DataError(TSCalibError):
    """Input data could not be used (maps to CLI exit code 2)."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class FormatError(DataError):
    pass


class EmptyProtocolError(DataError):
    """A series is too short to produce a single evaluation window."""


class UndefinedMetricError(TSCalibError):
    """A metric denominator is zero; the value is reported as missing."""


class NumericError(TSCalibError):
    """Numerical failure such as a diverging fit (maps to exit code 3)."""


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeries:
    id: str
    values: np.ndarray
    start_index: int = 0
    granularity: str | None = None
    timestamps: tuple | None = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1 or values.size == 0:
            raise DataError(f"series {self.id!r} is empty")
        if not np.all(np.isfinite(values)):
            raise DataError(f"series {self.id!r} contains non-finite values")
        object.__setattr__(self, "values", values)
        if self.timestamps is not None:
            ts = tuple(self.timestamps)
            if len(ts) != values.size:
                raise DataError(f"series {self.id!r}: timestamps/values length mismatch")
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise DataError(f"series {self.id!r}: timestamps not strictly increasing")
            object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class QuantileLevels:
    levels: tuple[float, ...] = tuple(round(0.1 * k, 10) for k in range(1, 10))

    def __post_init__(self):
        lv = tuple(float(x) for x in self.levels)
        if not lv:
            raise ValueError("quantile levels must be non-empty")
        if any(not (0.0 < x < 1.0) for x in lv):
            raise ValueError(f"quantile levels must lie in (0, 1): {lv}")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError(f"quantile levels must be strictly increasing: {lv}")
        object.__setattr__(self, "levels", lv)

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.levels)

    def index(self, q: float) -> int:
        """Column index of level ``q`` (matched to within 1e-9)."""
        for i, x in enumerate(self.levels):
            if abs(x - q) <= LEVEL_ATOL:
                return i
        raise KeyError(f"quantile level {q} not in {self.levels}")

    def __contains__(self, q: float) -> bool:
        return any(abs(x - q) <= LEVEL_ATOL for x in self.levels)

    @classmethod
    def parse(cls, text: str) -> "QuantileLevels":
        return cls(tuple(float(t) for t in text.split(",") if t.strip()))


@dataclass(frozen=True)
class ConfidenceLevels:
    levels: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)

    def __post_init__(self):
        lv = tuple(float(x) for x in self.levels)
        if not lv or any(not (0.0 < x < 1.0) for x in lv):
            raise ValueError(f"confidence levels must lie in (0, 1): {lv}")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError(f"confidence levels must be strictly increasing: {lv}")
        object.__setattr__(self, "levels", lv)

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def bounds(self, s: float) -> tuple[float, float]:
        return (1.0 - s) / 2.0, (1.0 + s) / 2.0

    def check_against(self, levels: QuantileLevels) -> None:
        for s in self.levels:
            for q in self.bounds(s):
                if q not in levels:
                    raise ValueError(
                        f"confidence {s} needs quantile level {q:g}, not in {levels.levels}"
                    )

    @classmethod
    def parse(cls, text: str) -> "ConfidenceLevels":
        return cls(tuple(float(t) for t in text.split(",") if t.strip()))


DEFAULT_LEVELS = QuantileLevels()
DEFAULT_CONFIDENCES = ConfidenceLevels()


@dataclass(frozen=True)
class ForecastWindow:
    series_id: str
    origin: int
    context_len: int
    horizon: int

    def __post_init__(self):
        if self.horizon < 1 or self.context_len < 1:
            raise ValueError("horizon and context_len must be >= 1")

    @property
    def context_slice(self) -> slice:
        return slice(self.origin - self.context_len + 1, self.origin + 1)

    @property
    def target_slice(self) -> slice:
        return slice(self.origin + 1, self.origin + 1 + self.horizon)

    def context(self, series: TimeSeries) -> np.ndarray:
        return series.values[self.context_slice]

    def targets(self, series: TimeSeries) -> np.ndarray:
        return series.values[self.target_slice]


@dataclass(frozen=True)
class QuantileForecast:
    """Predicted quantiles, one row per forecast step and one column per level."""

    values: np.ndarray
    levels: QuantileLevels = DEFAULT_LEVELS
    window: ForecastWindow | None = None
    crossing_repaired: bool = False
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.levels):
            raise FormatError(
                f"forecast values must have shape (H, {len(self.levels)}), got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise FormatError("forecast values must be finite")
        if self.window is not None and values.shape[0] != self.window.horizon:
            raise FormatError("forecast rows do not match the window horizon")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def column(self, q: float) -> np.ndarray:
        return self.values[:, self.levels.index(q)]

    @property
    def median(self) -> np.ndarray:
        return self.column(0.5)

    @classmethod
    def repaired(cls, values, levels: QuantileLevels = DEFAULT_LEVELS, **kw) -> "QuantileForecast":
        """Build a forecast, sorting any row whose quantiles cross."""
        values = np.asarray(values, dtype=float)
        crossing = bool(np.any(np.diff(values, axis=1) < 0)) if values.ndim == 2 else False
        if crossing:
            values = np.sort(values, axis=1)
        return cls(values=values, levels=levels, crossing_repaired=crossing, **kw)


# -- empirical quantiles and windows -------------------------------------------------


def empirical_quantile(data, p):
    """Linear-interpolation quantile with plotting position ``h = (n - 1) * p``.

    ``p`` may be a scalar or an array of probabilities. Quantiles are taken along
    the last axis of ``data``.
    """
    data = np.asarray(data, dtype=float)
    if data.size == 0 or data.shape[-1] == 0:
        raise ValueError("empirical_quantile of empty data")
    if np.isnan(data).any():
        raise ValueError("empirical_quantile: data contains NaN")
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ValueError(f"probability outside [0, 1]: {p}")
    out = np.quantile(data, p_arr, axis=-1, method="linear")
    if p_arr.ndim and data.ndim > 1:
        # np.quantile puts the probability axis first
        out = np.moveaxis(out, 0, -1)
    return float(out) if np.ndim(out) == 0 else out


def rolling_windows(
    series: TimeSeries, split_index: int, context_len: int, horizon: int, stride: int
) -> list[ForecastWindow]:
    if stride < 1 or horizon < 1 or context_len < 1:
        raise ValueError("stride, horizon and context_len must be >= 1")
    n = len(series)
    if split_index < context_len:
        raise EmptyProtocolError(
            f"series {series.id!r}: split {split_index} leaves fewer than {context_len} context points"
        )
    last_origin = n - 1 - horizon
    first = split_index - 1
    if first > last_origin:
        raise EmptyProtocolError(
            f"series {series.id!r}: length {n} too short for horizon {horizon} after split {split_index}"
        )
    return [
        ForecastWindow(series.id, origin, context_len, horizon)
        for origin in range(first, last_origin + 1, stride)
    ]


# -- series CSV ------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    id: str = "id"
    value: str = "value"
    timestamp: str | None = None


def _parse_timestamp(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return datetime.fromisoformat(text)


def load_series_csv(path, schema: CsvSchema = CsvSchema(), granularity: str | None = None) -> list[TimeSeries]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    rows: dict[str, list[tuple]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.id, schema.value] + ([schema.timestamp] if schema.timestamp else [])
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        # header is row 1
        for rowno, rec in enumerate(reader, start=2):
            sid = rec[schema.id]
            raw = rec[schema.value]
            try:
                val = float(raw)
            except (TypeError, ValueError):
                raise ParseError(f"{path}: row {rowno}: non-numeric value {raw!r}", row=rowno) from None
            if not math.isfinite(val):
                raise ParseError(f"{path}: row {rowno}: non-finite value {raw!r}", row=rowno)
            ts = None
            if schema.timestamp:
                try:
                    ts = _parse_timestamp(rec[schema.timestamp])
                except (TypeError, ValueError):
                    raise ParseError(
                        f"{path}: row {rowno}: bad timestamp {rec[schema.timestamp]!r}", row=rowno
                    ) from None
            rows.setdefault(sid, []).append((ts, val))
    out = []
    for sid, recs in rows.items():
        if not recs:
            raise DataError(f"series {sid!r} is empty")
        if schema.timestamp:
            recs = sorted(recs, key=lambda r: r[0])
            stamps = tuple(r[0] for r in recs)
        else:
            stamps = None
        out.append(TimeSeries(sid, np.array([r[1] for r in recs]), granularity=granularity, timestamps=stamps))
    return out


def write_series_csv(path, series: Iterable[TimeSeries]) -> None:
    series = list(series)
    with_ts = any(s.timestamps is not None for s in series)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "value", "timestamp"] if with_ts else ["id", "value"])
        for s in series:
            for i, v in enumerate(s.values):
                row = [s.id, repr(float(v))]
                if with_ts:
                    ts = s.timestamps[i] if s.timestamps is not None else s.start_index + i
                    row.append(ts.isoformat() if isinstance(ts, datetime) else ts)
                w.writerow(row)


# -- forecast files (JSON lines) ---------------------------------------------------------


def forecast_to_record(fc: QuantileForecast) -> dict:
    if fc.window is None:
        raise FormatError("only forecasts anchored to a window can be written")
    rec = {
        "series_id": fc.window.series_id,
        "origin": fc.window.origin,
        "levels": list(fc.levels.levels),
        "values": fc.values.tolist(),
    }
    for k, v in fc.provenance.items():
        rec.setdefault(k, v)
    return rec


def write_forecasts(path, forecasts: Iterable[QuantileForecast]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for fc in forecasts:
            fh.write(json.dumps(forecast_to_record(fc)) + "\n")


def forecast_from_record(rec: dict, context_len: int = 1) -> QuantileForecast:
    try:
        sid = str(rec["series_id"])
        origin = int(rec["origin"])
        levels = QuantileLevels(tuple(rec["levels"]))
        rows = rec["values"]
    except KeyError as e:
        raise FormatError(f"forecast record missing field {e}") from None
    except ValueError as e:
        raise FormatError(f"forecast record has bad levels: {e}") from None
    if not isinstance(rows, list) or not rows:
        raise FormatError("forecast record has no value rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise FormatError(f"ragged value rows in record ({sid}, {origin})")
    if widths != {len(levels)}:
        raise FormatError(
            f"record ({sid}, {origin}) declares {len(levels)} levels but rows have {widths.pop()} values"
        )
    window = ForecastWindow(sid, origin, context_len, len(rows))
    return QuantileForecast.repaired(np.array(rows, dtype=float), levels, window=window)


def read_forecasts(path) -> list[QuantileForecast]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}: line {lineno}: {e}") from None
            out.append(forecast_from_record(rec))
    return out


def series_by_id(series: Sequence[TimeSeries]) -> dict[str, TimeSeries]:
    return {s.id: s for s in series}
