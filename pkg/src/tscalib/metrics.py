"""Calibration, sharpness and accuracy scores for quantile forecasts.

Every window-level function takes a :class:`~tscalib.core.QuantileForecast` and the
``H`` realized targets. Zero denominators raise :class:`UndefinedMetricError`;
:func:`score_window` turns those into missing (NaN) entries.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    DEFAULT_CONFIDENCES,
    ConfidenceLevels,
    QuantileForecast,
    QuantileLevels,
    UndefinedMetricError,
    empirical_quantile,
)

METRICS = ("pce", "cce", "siw", "mase", "wql", "msis", "tpce", "tcce")
TAIL_LEVELS = QuantileLevels((0.1, 0.9))
TAIL_CONFIDENCES = ConfidenceLevels((0.8,))


def _targets(fc: QuantileForecast, targets) -> np.ndarray:
    y = np.asarray(targets, dtype=float)
    if y.ndim != 1 or y.size != fc.horizon:
        raise ValueError(f"expected {fc.horizon} targets, got shape {y.shape}")
    return y


def _columns(fc: QuantileForecast, levels: Iterable[float]) -> np.ndarray:
    try:
        return np.stack([fc.column(q) for q in levels], axis=1)
    except KeyError as e:
        raise ValueError(str(e)) from None


def below_fractions(fc: QuantileForecast, targets, levels: QuantileLevels | None = None) -> np.ndarray:
    """Fraction of steps with ``y_t <= yhat^q_t`` for each level ``q``."""
    levels = levels or fc.levels
    y = _targets(fc, targets)
    return (y[:, None] <= _columns(fc, levels)).mean(axis=0)


def pce(fc: QuantileForecast, targets, levels: QuantileLevels | None = None) -> float:
    levels = levels or fc.levels
    frac = below_fractions(fc, targets, levels)
    return float(np.mean(np.abs(levels.array - frac)))


def coverages(fc: QuantileForecast, targets, conf: ConfidenceLevels = DEFAULT_CONFIDENCES) -> np.ndarray:
    """Fraction of steps inside the closed central interval for each confidence ``s``."""
    y = _targets(fc, targets)
    out = []
    for s in conf:
        lo, hi = conf.bounds(s)
        inside = (_columns(fc, [lo])[:, 0] <= y) & (y <= _columns(fc, [hi])[:, 0])
        out.append(inside.mean())
    return np.array(out)


def cce(fc: QuantileForecast, targets, conf: ConfidenceLevels = DEFAULT_CONFIDENCES) -> float:
    cov = coverages(fc, targets, conf)
    return float(np.mean(np.asarray(conf.levels) - cov))


def siw(
    fc: QuantileForecast,
    targets,
    conf: ConfidenceLevels = DEFAULT_CONFIDENCES,
    reference=None,
) -> float:
    """Mean predicted central-interval width over the realized spread.

    The spread ``y^{q_high} - y^{q_low}`` is taken from the empirical quantiles of
    ``reference``, which defaults to the window's own targets.
    """
    y = _targets(fc, targets)
    ref = y if reference is None else np.asarray(reference, dtype=float)
    ratios = []
    for s in conf:
        lo, hi = conf.bounds(s)
        spread = empirical_quantile(ref, hi) - empirical_quantile(ref, lo)
        if spread <= 0:
            raise UndefinedMetricError(f"SIW undefined: zero realized spread at s={s}")
        width = _columns(fc, [hi])[:, 0] - _columns(fc, [lo])[:, 0]
        ratios.append(np.mean(width) / spread)
    return float(np.mean(ratios))


def naive_mae(targets) -> float:
    """One-step naive predictor MAE over the target window (MASE/MSIS scale)."""
    y = np.asarray(targets, dtype=float)
    if y.size < 2:
        raise ValueError("naive MAE needs at least two targets")
    d = float(np.mean(np.abs(np.diff(y))))
    if d == 0:
        raise UndefinedMetricError("naive MAE is zero (constant targets)")
    return d


def mase(median, targets) -> float:
    m = np.asarray(median, dtype=float)
    y = np.asarray(targets, dtype=float)
    if m.shape != y.shape:
        raise ValueError("median and targets must have the same length")
    if y.size < 2:
        raise ValueError("MASE needs H >= 2")
    return float(np.mean(np.abs(m - y)) / naive_mae(y))


def pinball(y, yhat, q):
    """Two-times-scaled quantile loss, split on ``yhat >= y``."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    q = np.asarray(q, dtype=float)
    return np.where(yhat >= y, 2 * (1 - q) * (yhat - y), 2 * q * (y - yhat))


def wql(fc: QuantileForecast, targets, levels: QuantileLevels | None = None) -> float:
    levels = levels or fc.levels
    y = _targets(fc, targets)
    denom = float(np.sum(np.abs(y)))
    if denom == 0:
        raise UndefinedMetricError("WQL undefined: all targets are zero")
    loss = pinball(y[:, None], _columns(fc, levels), levels.array[None, :])
    return float(loss.sum() / denom)


def msis(fc: QuantileForecast, targets, s: float = 0.8, scale: float | None = None) -> float:
    y = _targets(fc, targets)
    if y.size < 2:
        raise ValueError("MSIS needs H >= 2")
    lo_q, hi_q = (1 - s) / 2, (1 + s) / 2
    lower = _columns(fc, [lo_q])[:, 0]
    upper = _columns(fc, [hi_q])[:, 0]
    k = 2.0 / (1.0 - s)
    score = (upper - lower) + k * (lower - y) * (y < lower) + k * (y - upper) * (y > upper)
    denom = naive_mae(y) if scale is None else float(scale)
    if denom == 0:
        raise UndefinedMetricError("MSIS scale is zero")
    return float(np.mean(score) / denom)


def tailed(fc: QuantileForecast, targets) -> tuple[float, float]:
    """(TPCE, TCCE): PCE on levels {0.1, 0.9} and CCE on the 80% interval only."""
    return pce(fc, targets, TAIL_LEVELS), cce(fc, targets, TAIL_CONFIDENCES)


# -- per-window records ------------------------------------------------------------------


@dataclass
class MetricRecord:
    series_id: str
    origin: int
    pce: float
    cce: float
    siw: float
    mase: float
    wql: float
    msis: float
    tpce: float
    tcce: float
    dataset: str = ""
    model: str = ""
    levels: tuple = ()
    below: tuple = ()
    confidences: tuple = ()
    cover: tuple = ()
    repaired: bool = False

    def value(self, metric: str) -> float:
        return getattr(self, metric)


def _safe(fn, *args, **kw) -> float:
    try:
        return fn(*args, **kw)
    except UndefinedMetricError:
        return math.nan


def score_window(
    fc: QuantileForecast,
    targets,
    levels: QuantileLevels | None = None,
    conf: ConfidenceLevels = DEFAULT_CONFIDENCES,
    msis_s: float = 0.8,
    dataset: str = "",
    model: str = "",
    siw_reference=None,
    msis_scale: float | None = None,
) -> MetricRecord:
    """Score one forecast window with every metric; undefined values become NaN."""
    levels = levels or fc.levels
    y = _targets(fc, targets)
    below = below_fractions(fc, y, levels)
    cover = coverages(fc, y, conf)
    tpce, tcce = tailed(fc, y)
    w = fc.window
    return MetricRecord(
        series_id=w.series_id if w else "",
        origin=w.origin if w else -1,
        pce=float(np.mean(np.abs(levels.array - below))),
        cce=float(np.mean(np.asarray(conf.levels) - cover)),
        siw=_safe(siw, fc, y, conf, siw_reference),
        mase=_safe(mase, fc.median, y),
        wql=_safe(wql, fc, y, levels),
        msis=_safe(msis, fc, y, msis_s, msis_scale),
        tpce=tpce,
        tcce=tcce,
        dataset=dataset,
        model=model,
        levels=tuple(levels.levels),
        below=tuple(float(b) for b in below),
        confidences=tuple(conf.levels),
        cover=tuple(float(c) for c in cover),
        repaired=fc.crossing_repaired,
    )


# -- aggregation ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricStat:
    mean: float
    sem: float
    n: int
    excluded: int = 0

    @property
    def missing(self) -> bool:
        return self.n == 0


@dataclass
class AggregateReport:
    key: tuple
    stats: dict = field(default_factory=dict)
    n_series: int = 0
    repaired: int = 0

    @property
    def dataset(self) -> str:
        return self.key[0] if self.key else ""

    @property
    def model(self) -> str:
        return self.key[1] if len(self.key) > 1 else ""


def mean_sem(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def _pooled_pce(recs: list[MetricRecord], levels: Sequence[float], metric: str = "pce") -> float:
    """PCE against indicator fractions pooled over ``recs``.

    Falls back to the window mean of ``metric`` when some record carries no
    fraction for a requested level (hand-built or trimmed records).
    """
    rows = []
    for r in recs:
        frac = dict(zip(r.levels, r.below))
        if not len(levels) or any(q not in frac for q in levels):
            vals = np.array([x.value(metric) for x in recs], dtype=float)
            vals = vals[~np.isnan(vals)]
            return float(vals.mean()) if vals.size else math.nan
        rows.append([frac[q] for q in levels])
    below = np.mean(rows, axis=0)
    return float(np.mean(np.abs(np.asarray(levels) - below)))


def series_summary(recs: list[MetricRecord], pooling: str = "pooled") -> dict[str, float]:
    """Per-series value of every metric from that series' windows.

    With ``pooling="pooled"`` PCE and TPCE compare each level against the indicator
    fraction pooled over all windows and steps of the series; ``"window_mean"``
    averages the per-window values instead. The other metrics are window means
    (CCE is linear, so both rules agree for it).
    """
    out = {}
    for m in METRICS:
        vals = np.array([r.value(m) for r in recs], dtype=float)
        ok = vals[~np.isnan(vals)]
        out[m] = float(ok.mean()) if ok.size else math.nan
    if pooling == "pooled":
        out["pce"] = _pooled_pce(recs, recs[0].levels)
        out["tpce"] = _pooled_pce(recs, TAIL_LEVELS.levels, "tpce")
    elif pooling != "window_mean":
        raise ValueError(f"unknown pooling rule {pooling!r}")
    return out


def aggregate(
    records: Iterable[MetricRecord],
    group_by: Sequence[str] = ("dataset", "model"),
    pooling: str = "pooled",
) -> list[AggregateReport]:
    """Per-series values first, then the cross-series mean and standard error."""
    groups: dict[tuple, dict[str, list[MetricRecord]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        key = tuple(getattr(r, g) for g in group_by)
        groups[key][r.series_id].append(r)
    reports = []
    for key in sorted(groups):
        per_series = groups[key]
        summaries = [series_summary(per_series[sid], pooling) for sid in sorted(per_series)]
        rep = AggregateReport(key=key, n_series=len(summaries))
        rep.repaired = sum(r.repaired for recs in per_series.values() for r in recs)
        for m in METRICS:
            vals = np.array([s[m] for s in summaries])
            ok = vals[~np.isnan(vals)]
            mean, sem = mean_sem(ok)
            rep.stats[m] = MetricStat(mean, sem, int(ok.size), int(vals.size - ok.size))
        reports.append(rep)
    return reports


# -- CSV output -----------------------------------------------------------------------------

RECORD_COLUMNS = ("dataset", "model", "series_id", "origin") + METRICS + ("repaired",)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_records_csv(path, records: Sequence[MetricRecord]) -> None:
    """Write window records; extra columns hold per-level fractions and coverages.

    Records scored on different level sets share one header (the union); cells
    for levels a record was not scored on are left empty.
    """
    records = list(records)
    levels = sorted({q for r in records for q in r.levels})
    confs = sorted({s for r in records for s in r.confidences})
    header = list(RECORD_COLUMNS) + [f"below_{q:g}" for q in levels] + [f"cover_{s:g}" for s in confs]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            below, cover = dict(zip(r.levels, r.below)), dict(zip(r.confidences, r.cover))
            row = [_fmt(getattr(r, c)) for c in RECORD_COLUMNS]
            row += [_fmt(float(below[q])) if q in below else "" for q in levels]
            row += [_fmt(float(cover[c])) if c in cover else "" for c in confs]
            w.writerow(row)


def read_records_csv(path) -> list[MetricRecord]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        lv = [(float(c[6:]), c) for c in cols if c.startswith("below_")]
        cf = [(float(c[6:]), c) for c in cols if c.startswith("cover_")]
        for row in reader:
            num = {m: float(row[m]) if row[m] != "" else math.nan for m in METRICS}
            levels = tuple(q for q, c in lv if row[c] != "")
            confs = tuple(s for s, c in cf if row[c] != "")
            out.append(MetricRecord(
                series_id=row["series_id"],
                origin=int(row["origin"]),
                dataset=row["dataset"],
                model=row["model"],
                levels=levels,
                below=tuple(float(row[c]) for _, c in lv if row[c] != ""),
                confidences=confs,
                cover=tuple(float(row[c]) for _, c in cf if row[c] != ""),
                repaired=row.get("repaired", "0") == "1",
                **num,
            ))
    return out


AGGREGATE_COLUMNS = ("dataset", "model", "metric", "mean", "sem", "n_series", "excluded")


def write_aggregate_csv(path, reports: Sequence[AggregateReport]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for rep in reports:
            for m in METRICS:
                st = rep.stats[m]
                w.writerow([rep.dataset, rep.model, m, _fmt(st.mean), _fmt(st.sem), st.n, st.excluded])
