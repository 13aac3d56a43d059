"""Experiment configuration and its INI file form.

A config file has one ``[experiment]`` section plus any number of
``[dataset:NAME]`` and ``[model:NAME]`` sections::

    [experiment]
    horizon = 64
    stride = 1
    context_len = 128
    seed = 0

    [dataset:ar1]
    synth = ar1
    length = 4367
    split = 1440

    [model:oracle]
    kind = oracle_ar1
    alpha = 0.9
    sigma = 0.1
    patch = 64
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..core import DEFAULT_CONFIDENCES, DEFAULT_LEVELS, ConfidenceLevels, CsvSchema, QuantileLevels
from ..forecasters import KINDS
from ..rollout import STRATEGIES
from ..synthgen import SynthSpec

OUT_ENV = "TSCALIB_OUT"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 1)."""


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    split: int
    path: str | None = None
    synth: SynthSpec | None = None
    n_series: int = 1
    schema: CsvSchema = CsvSchema()
    stride: int | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synth is None):
            raise ConfigError(f"dataset {self.name!r}: give exactly one of 'path' or 'synth'")


@dataclass(frozen=True)
class ModelConfig:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    order: int = 1
    patch: int = 64
    strategy: str = "native"
    point_rule: str = "median"
    n_trajectories: int = 100
    max_context: int | None = None
    refit: bool = False
    forecast_file: str | None = None

    def __post_init__(self):
        if self.kind != "external" and self.kind not in KINDS:
            raise ConfigError(f"model {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "external" and not self.forecast_file:
            raise ConfigError(f"model {self.name!r}: external models need 'forecasts'")
        if self.strategy != "native" and self.strategy not in STRATEGIES:
            raise ConfigError(f"model {self.name!r}: unknown strategy {self.strategy!r}")
        if self.patch < 1 or self.n_trajectories < 1:
            raise ConfigError(f"model {self.name!r}: patch and n_traj must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple = ()
    models: tuple = ()
    context_len: int = 128
    horizon: int = 64
    stride: int | None = None
    levels: QuantileLevels = DEFAULT_LEVELS
    confidences: ConfidenceLevels = DEFAULT_CONFIDENCES
    msis_s: float = 0.8
    seed: int = 0
    out: str | None = None
    workers: int = 1
    pooling: str = "pooled"
    write_forecasts: bool = False

    def validate(self) -> "ExperimentConfig":
        strides = [self.stride] + [d.stride for d in self.datasets]
        if self.horizon < 1 or self.context_len < 1 or any(s is not None and s < 1 for s in strides):
            raise ConfigError("horizon, stride and context_len must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        try:
            self.confidences.check_against(self.levels)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for q in (0.1, 0.9, 0.5, (1 - self.msis_s) / 2, (1 + self.msis_s) / 2):
            if q not in self.levels:
                raise ConfigError(f"quantile level {q:g} is required by the metric suite")
        if self.pooling not in ("pooled", "window_mean"):
            raise ConfigError(f"unknown pooling rule {self.pooling!r}")
        return self

    def stride_for(self, dataset: DatasetConfig, length: int) -> int:
        """Explicit stride if any, else the smallest of 1, 4, 8 keeping origins near 1000 or fewer."""
        if dataset.stride is not None:
            return dataset.stride
        if self.stride is not None:
            return self.stride
        return default_stride(length - dataset.split - self.horizon + 1)

    def output_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "results")


def default_stride(n_origins: int) -> int:
    for d in (1, 4):
        if n_origins <= 1000 * d:
            return d
    return 8


_SYNTH_FIELDS = {f.name: f.type for f in fields(SynthSpec)}
_MODEL_KEYS = {"kind", "order", "patch", "strategy", "point_rule", "n_traj", "max_context", "refit", "forecasts"}


def _synth_spec(sec: configparser.SectionProxy, name: str) -> SynthSpec:
    kw = {"kind": sec["synth"]}
    for key, raw in sec.items():
        if key in ("synth", "split", "path", "n_series", "stride"):
            continue
        if key not in _SYNTH_FIELDS:
            raise ConfigError(f"dataset {name!r}: unknown key {key!r}")
        typ = _SYNTH_FIELDS[key]
        kw[key] = int(raw) if "int" in str(typ) and "float" not in str(typ) else (
            raw if "str" in str(typ) else float(raw)
        )
    if "split" in sec:
        kw["split"] = int(sec["split"])
    kw.setdefault("series_id", name)
    try:
        return SynthSpec(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"dataset {name!r}: {e}") from None


def _parse_bool(raw: str) -> bool:
    return raw.strip().lower() in ("1", "true", "yes", "on")


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        return _parse(text, base_dir)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad config value: {e}") from None


def _parse(text: str, base_dir: Path | None) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    base_dir = base_dir or Path(".")
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    kw: dict = {}
    try:
        for key in ("context_len", "horizon", "stride", "seed", "workers"):
            if key in exp:
                kw[key] = int(exp[key])
        if "msis_s" in exp:
            kw["msis_s"] = float(exp["msis_s"])
        if "levels" in exp:
            kw["levels"] = QuantileLevels.parse(exp["levels"])
        if "confidences" in exp:
            kw["confidences"] = ConfidenceLevels.parse(exp["confidences"])
    except ValueError as e:
        raise ConfigError(f"[experiment]: {e}") from None
    for key in ("out", "pooling"):
        if key in exp:
            kw[key] = exp[key]
    if "write_forecasts" in exp:
        kw["write_forecasts"] = _parse_bool(exp["write_forecasts"])

    datasets, models = [], []
    for sname in cp.sections():
        sec = cp[sname]
        if sname.startswith("dataset:"):
            name = sname.split(":", 1)[1]
            stride = int(sec["stride"]) if "stride" in sec else None
            if "synth" in sec:
                spec = _synth_spec(sec, name)
                n_series = int(sec.get("n_series", 1))
                datasets.append(DatasetConfig(name, spec.split, synth=spec, n_series=n_series, stride=stride))
            elif "path" in sec:
                if "split" not in sec:
                    raise ConfigError(f"dataset {name!r}: 'split' is required")
                schema = CsvSchema(sec.get("id_column", "id"), sec.get("value_column", "value"), sec.get("timestamp_column"))
                path = str(base_dir / sec["path"])
                datasets.append(DatasetConfig(name, int(sec["split"]), path=path, schema=schema, stride=stride))
            else:
                raise ConfigError(f"dataset {name!r}: needs 'synth' or 'path'")
        elif sname.startswith("model:"):
            name = sname.split(":", 1)[1]
            params = {k: float(v) for k, v in sec.items() if k not in _MODEL_KEYS and k != "tail"}
            if "tail" in sec:
                params["tail"] = sec["tail"]
            ff = sec.get("forecasts")
            models.append(ModelConfig(
                name=name,
                kind=sec.get("kind", "external" if ff else ""),
                params=params,
                order=int(sec.get("order", 1)),
                patch=int(sec.get("patch", 64)),
                strategy=sec.get("strategy", "native"),
                point_rule=sec.get("point_rule", "median"),
                n_trajectories=int(sec.get("n_traj", 100)),
                max_context=int(sec["max_context"]) if "max_context" in sec else None,
                refit=_parse_bool(sec.get("refit", "false")),
                forecast_file=str(base_dir / ff) if ff else None,
            ))
        elif sname != "experiment":
            raise ConfigError(f"unknown section [{sname}]")
    return ExperimentConfig(datasets=tuple(datasets), models=tuple(models), **kw).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


def apply_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """CLI flags win over the file. Rollout flags apply to every forecaster model."""
    exp_keys = {"seed", "horizon", "stride", "levels", "out", "workers", "context_len"}
    kw = {k: v for k, v in overrides.items() if k in exp_keys and v is not None}
    model_kw = {}
    if overrides.get("strategy") is not None:
        model_kw["strategy"] = overrides["strategy"]
    if overrides.get("patch") is not None:
        model_kw["patch"] = overrides["patch"]
    if overrides.get("n_traj") is not None:
        model_kw["n_trajectories"] = overrides["n_traj"]
    models = tuple(replace(m, **model_kw) if m.kind != "external" else m for m in cfg.models)
    datasets = cfg.datasets
    if overrides.get("stride") is not None:
        datasets = tuple(replace(d, stride=None) for d in datasets)
    return replace(cfg, models=models, datasets=datasets, **kw).validate()
