"""Rolling-origin backtests and scoring of externally produced forecast files."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import (
    DataError,
    FormatError,
    ForecastWindow,
    QuantileForecast,
    TimeSeries,
    forecast_from_record,
    load_series_csv,
    rolling_windows,
    write_forecasts,
)
from ..forecasters import Forecaster, fit, quantiles_of
from ..metrics import AggregateReport, MetricRecord, aggregate, score_window, write_aggregate_csv, write_records_csv
from ..rollout import RolloutConfig, rollout
from ..streams import StreamFamily
from ..synthgen import generate, generate_suite
from .config import ConfigError, DatasetConfig, ExperimentConfig, ModelConfig
from .report import emit_report


@dataclass(frozen=True)
class Reject:
    model: str
    series_id: str
    origin: int | None
    reason: str


@dataclass
class BacktestResult:
    records: list[MetricRecord]
    reports: list[AggregateReport]
    rejects: list[Reject] = field(default_factory=list)
    forecasts: list[QuantileForecast] = field(default_factory=list)
    paths: dict = field(default_factory=dict)


def load_dataset(ds: DatasetConfig) -> list[TimeSeries]:
    if ds.synth is not None:
        if ds.n_series == 1:
            return [generate(ds.synth).series]
        return [d.series for d in generate_suite(ds.synth, ds.n_series)]
    return load_series_csv(ds.path, ds.schema)


def _required_levels(cfg: ExperimentConfig) -> set[float]:
    req = {0.1, 0.5, 0.9, (1 - cfg.msis_s) / 2, (1 + cfg.msis_s) / 2}
    for s in cfg.confidences:
        req.update(cfg.confidences.bounds(s))
    return req


def build_forecaster(model: ModelConfig, train: np.ndarray, cfg: ExperimentConfig) -> Forecaster:
    params = {k: v for k, v in model.params.items() if not (model.kind != "climatology" and k == "tail")}
    try:
        return fit(model.kind, train, order=model.order, p=model.patch, levels=cfg.levels, **params)
    except TypeError as e:
        raise ConfigError(f"model {model.name!r}: {e}") from None


def forecast_window(
    f: Forecaster,
    model: ModelConfig,
    series: TimeSeries,
    window: ForecastWindow,
    cfg: ExperimentConfig,
    dataset: str = "",
) -> QuantileForecast:
    """Forecast one window natively or through the model's rollout strategy."""
    context = window.context(series)
    if model.strategy == "native":
        if cfg.horizon > f.horizon:
            raise ConfigError(
                f"model {model.name!r}: horizon {cfg.horizon} exceeds patch {f.horizon}; choose a rollout strategy"
            )
        return quantiles_of(f.predict_batch(context[None, :], cfg.horizon)[0], cfg.levels, window)
    rcfg = RolloutConfig(
        strategy=model.strategy,
        patch=model.patch,
        horizon=cfg.horizon,
        point_rule=model.point_rule,
        n_trajectories=model.n_trajectories,
        levels=cfg.levels,
        seed=cfg.seed,
        max_context=model.max_context,
    )
    rng = StreamFamily(cfg.seed).child(dataset, model.name, series.id, window.origin)
    return rollout(f, context, rcfg, rng=rng, window=window)


def _series_tasks(model: ModelConfig, ds: DatasetConfig, series: TimeSeries, cfg: ExperimentConfig):
    stride = cfg.stride_for(ds, len(series))
    windows = rolling_windows(series, ds.split, cfg.context_len, cfg.horizon, stride)
    base = None if model.refit else build_forecaster(model, series.values[: ds.split], cfg)
    for w in windows:
        yield (model, ds, series, w, base)


def _run_task(task, cfg: ExperimentConfig):
    model, ds, series, window, f = task
    if f is None:
        f = build_forecaster(model, series.values[: window.origin + 1], cfg)
    fc = forecast_window(f, model, series, window, cfg, ds.name)
    rec = score_window(
        fc, window.targets(series), cfg.levels, cfg.confidences, cfg.msis_s, dataset=ds.name, model=model.name
    )
    return rec, fc


def _read_forecast_lines(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such forecast file: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def score_external(
    forecast_file,
    truth_series,
    cfg: ExperimentConfig,
    model: str = "external",
    dataset: str | dict = "",
) -> tuple[list[MetricRecord], list[Reject]]:
    """Score a JSON-lines forecast file against ground truth.

    ``truth_series`` is a list of series; ``dataset`` is either one label for all of
    them or a mapping from series id to dataset label. Records that cannot be
    resolved against the truth are returned as rejects and scoring continues.
    """
    truth = {s.id: s for s in truth_series}
    labels = dataset if isinstance(dataset, dict) else {sid: dataset for sid in truth}
    required = _required_levels(cfg)
    records, rejects = [], []
    for lineno, line in _read_forecast_lines(forecast_file):
        sid, origin = "", None
        try:
            raw = json.loads(line)
            sid, origin = str(raw.get("series_id", "")), raw.get("origin")
            fc = forecast_from_record(raw, cfg.context_len)
        except (json.JSONDecodeError, FormatError, AttributeError, TypeError, ValueError) as e:
            rejects.append(Reject(model, sid, origin, f"line {lineno}: {e}"))
            continue
        w = fc.window
        series = truth.get(w.series_id)
        reason = None
        if series is None:
            reason = f"unknown series {w.series_id!r}"
        elif w.origin < 0 or w.origin >= len(series) - 1:
            reason = f"origin {w.origin} beyond series end ({len(series)} points)"
        elif w.origin + w.horizon > len(series) - 1:
            reason = f"targets overrun series end (origin {w.origin}, horizon {w.horizon})"
        elif w.horizon != cfg.horizon:
            reason = f"horizon {w.horizon} differs from configured {cfg.horizon}"
        else:
            missing = [q for q in sorted(required) if q not in fc.levels]
            if missing:
                reason = "missing levels " + ", ".join(f"{q:g}" for q in missing)
        if reason:
            rejects.append(Reject(model, w.series_id, w.origin, reason))
            continue
        records.append(
            score_window(
                fc, w.targets(series), fc.levels, cfg.confidences, cfg.msis_s,
                dataset=labels.get(w.series_id, ""), model=model,
            )
        )
    return records, rejects


def write_rejects_csv(path, rejects) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "series_id", "origin", "reason"])
        for r in rejects:
            w.writerow([r.model, r.series_id, "" if r.origin is None else r.origin, r.reason])


def run_backtest(cfg: ExperimentConfig, write: bool = True) -> BacktestResult:
    """Forecast and score every (dataset, model, series, window); deterministic given the seed."""
    cfg.validate()
    if not cfg.datasets or not cfg.models:
        raise ConfigError("a backtest needs at least one dataset and one model")
    loaded = [(ds, load_dataset(ds)) for ds in cfg.datasets]

    tasks = []
    for model in cfg.models:
        if model.kind == "external":
            continue
        for ds, series_list in loaded:
            for s in series_list:
                tasks.extend(_series_tasks(model, ds, s, cfg))

    def work(task):
        return _run_task(task, cfg)

    if cfg.workers == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, tasks))
    records = [r for r, _ in results]
    forecasts = [fc for _, fc in results] if cfg.write_forecasts else []

    rejects: list[Reject] = []
    all_series = [s for _, sl in loaded for s in sl]
    labels = {s.id: ds.name for ds, sl in loaded for s in sl}
    for model in cfg.models:
        if model.kind == "external":
            recs, rej = score_external(model.forecast_file, all_series, cfg, model.name, labels)
            records.extend(recs)
            rejects.extend(rej)

    if not records:
        raise DataError("no window could be scored")
    reports = aggregate(records, pooling=cfg.pooling)
    result = BacktestResult(records, reports, rejects, forecasts)
    if write:
        out = cfg.output_dir()
        out.mkdir(parents=True, exist_ok=True)
        result.paths["records"] = out / "records.csv"
        write_records_csv(result.paths["records"], records)
        result.paths["aggregate"] = out / "aggregate.csv"
        write_aggregate_csv(result.paths["aggregate"], reports)
        result.paths["rejects"] = out / "rejects.csv"
        write_rejects_csv(result.paths["rejects"], rejects)
        if cfg.write_forecasts:
            result.paths["forecasts"] = out / "forecasts.jsonl"
            write_forecasts(result.paths["forecasts"], forecasts)
        result.paths.update(emit_report(reports, out))
    return result
