"""Deterministic synthetic series and partial-autocorrelation diagnostics.

``latent_regression`` is an extension used by the prediction-head experiments: it
produces a feature matrix together with targets that are linear in the features
plus noise from a chosen family.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import TimeSeries
from .streams import StreamFamily

SYNTH_KINDS = ("iid_gauss", "ar1", "iid_student_t", "seasonal", "latent_regression")


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "ar1"
    length: int = 4367
    split: int = 1440
    alpha: float = 0.9
    df: float = 3.0
    scale: float = 1.0
    period: int = 24
    amplitude: float = 1.0
    noise_sd: float = 0.3
    n_features: int = 4
    noise: str = "student_t"
    seed: int = 0
    series_id: str = ""

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if not (0 < self.split < self.length):
            raise ValueError("need 0 < split < length")
        if not abs(self.alpha) < 1:
            raise ValueError("|alpha| must be < 1")
        if self.kind == "iid_student_t" or (self.kind == "latent_regression" and self.noise == "student_t"):
            if self.df <= 2:
                raise ValueError("Student-t generator needs df > 2")
        if self.noise not in ("gaussian", "student_t"):
            raise ValueError(f"unknown noise family {self.noise!r}")
        if self.period < 1 or self.n_features < 1 or self.scale <= 0 or self.noise_sd < 0:
            raise ValueError("invalid generator parameters")

    @property
    def name(self) -> str:
        return self.series_id or self.kind

    def ar1_stationary_var(self) -> float:
        """Stationary variance of the AR(1) generator with unit-variance shocks."""
        return (1 - self.alpha) ** 2 / (1 - self.alpha**2)


@dataclass(frozen=True)
class SynthData:
    series: TimeSeries
    spec: SynthSpec
    features: np.ndarray | None = None
    weights: np.ndarray | None = field(default=None, repr=False)


def generate(spec: SynthSpec) -> SynthData:
    streams = StreamFamily(spec.seed)
    eps = streams.stream(spec.name, "eps")
    n = spec.length
    features = weights = None
    if spec.kind == "iid_gauss":
        y = eps.normal(n)
    elif spec.kind == "ar1":
        e = eps.normal(n)
        y = np.empty(n)
        y[0] = np.sqrt(spec.ar1_stationary_var()) * e[0]
        for t in range(1, n):
            y[t] = spec.alpha * y[t - 1] + (1 - spec.alpha) * e[t]
    elif spec.kind == "iid_student_t":
        y = spec.scale * eps.student_t(spec.df, n)
    elif spec.kind == "seasonal":
        t = np.arange(n)
        y = spec.amplitude * np.sin(2 * np.pi * t / spec.period) + spec.noise_sd * eps.normal(n)
    else:
        fs = streams.stream(spec.name, "features")
        features = 2.0 * fs.uniform((n, spec.n_features)) - 1.0
        weights = streams.stream(spec.name, "weights").normal(spec.n_features + 1)
        noise = eps.student_t(spec.df, n) if spec.noise == "student_t" else eps.normal(n)
        y = features @ weights[:-1] + weights[-1] + spec.scale * noise
    return SynthData(TimeSeries(spec.name, y), spec, features, weights)


def generate_suite(spec: SynthSpec, n_series: int) -> list[SynthData]:
    """Independent series with per-series seeds derived from ``spec.seed``."""
    return [generate(replace(spec, series_id=f"{spec.name}_{i}", seed=(spec.seed, i))) for i in range(n_series)]


def write_features_csv(path, features: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(features.shape[1])])
        for row in features:
            w.writerow([repr(float(v)) for v in row])


# -- diagnostics --------------------------------------------------------------------------


def autocovariance(x, max_lag: int) -> np.ndarray:
    """Biased (divide-by-N) sample autocovariances at lags 0..max_lag."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    n = d.size
    return np.array([d[: n - k] @ d[k:] / n for k in range(max_lag + 1)])


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelations at lags 1..max_lag via the Durbin-Levinson recursion."""
    x = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    if max_lag < 1 or max_lag >= x.size / 4:
        raise ValueError(f"max_lag must be in [1, {x.size / 4:g})")
    g = autocovariance(x, max_lag)
    if g[0] <= 0:
        raise ValueError("PACF undefined for a constant series")
    rho = g / g[0]
    out = np.empty(max_lag)
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        a = (rho[k] - phi @ rho[k - 1 : 0 : -1]) / v if k > 1 else rho[1]
        phi = np.concatenate([phi - a * phi[::-1], [a]])
        v *= 1 - a * a
        out[k - 1] = a
    return out
