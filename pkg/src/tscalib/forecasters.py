"""Reference forecasters with known or closed-form predictive laws.

Every forecaster maps a batch of contexts, shape ``(n, T)``, to a batched
distribution of shape ``(n, steps)`` via :meth:`Forecaster.predict_batch`. A
single context goes through :meth:`Forecaster.predict`, which returns one law per
step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_LEVELS,
    DataError,
    ForecastWindow,
    QuantileForecast,
    QuantileLevels,
    TimeSeries,
    empirical_quantile,
)
from .dist import SCALE_FLOOR, Distribution, Gaussian, PiecewiseLinear

KINDS = ("oracle_iid", "oracle_ar1", "linear_ar", "persistence", "climatology")


def _as_batch(contexts) -> np.ndarray:
    c = np.asarray(contexts, dtype=float)
    return c[None, :] if c.ndim == 1 else c


@dataclass(frozen=True)
class Forecaster:
    horizon: int = 64
    kind = ""

    @property
    def min_context(self) -> int:
        return 1

    def _check(self, contexts, steps: int) -> np.ndarray:
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if steps > self.horizon:
            raise ValueError(
                f"{self.kind}: {steps} steps exceed native horizon {self.horizon}; use a rollout"
            )
        c = _as_batch(contexts)
        if c.shape[1] < self.min_context:
            raise ValueError(f"{self.kind}: context shorter than {self.min_context}")
        return c

    def predict_batch(self, contexts, steps: int) -> Distribution:
        raise NotImplementedError

    def predict(self, context, steps: int) -> list[Distribution]:
        d = self.predict_batch(np.asarray(context, dtype=float)[None, :], steps)
        return [d[0, h] for h in range(steps)]

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "horizon": self.horizon, "params": self.params()}


@dataclass(frozen=True)
class OracleIID(Forecaster):
    mu: float = 0.0
    sigma: float = 1.0
    kind = "oracle_iid"

    def predict_batch(self, contexts, steps):
        c = self._check(contexts, steps)
        shape = (c.shape[0], steps)
        return Gaussian(np.full(shape, self.mu), np.full(shape, self.sigma))

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class OracleAR1(Forecaster):
    """True AR(1) law ``y_t - m = alpha (y_{t-1} - m) + e_t``, ``e_t ~ N(0, sigma^2)``."""

    alpha: float = 0.9
    sigma: float = 0.1
    mean: float = 0.0
    kind = "oracle_ar1"

    def step_sd(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        a2 = self.alpha**2
        if abs(a2 - 1.0) < 1e-15:
            var = h * self.sigma**2
        else:
            var = self.sigma**2 * (1 - a2**h) / (1 - a2)
        return np.sqrt(var)

    def exact(self, contexts, steps: int) -> Gaussian:
        """Closed-form ``h``-step laws for ``h = 1..steps`` with no horizon limit."""
        c = _as_batch(contexts)
        h = np.arange(1, steps + 1)
        last = c[:, -1:] - self.mean
        mu = self.mean + last * self.alpha ** h[None, :]
        return Gaussian(mu, np.broadcast_to(self.step_sd(h), mu.shape))

    def predict_batch(self, contexts, steps):
        return self.exact(self._check(contexts, steps), steps)

    def params(self):
        return {"alpha": self.alpha, "sigma": self.sigma, "mean": self.mean}


@dataclass(frozen=True)
class LinearAR(Forecaster):
    """Least-squares AR(p) with intercept and Gaussian innovations."""

    coef: tuple = (0.0,)
    intercept: float = 0.0
    sigma: float = 1.0
    kind = "linear_ar"

    @property
    def order(self) -> int:
        return len(self.coef)

    @property
    def min_context(self):
        return self.order

    def psi(self, n: int) -> np.ndarray:
        """Impulse-response weights psi_0..psi_{n-1}."""
        phi = np.asarray(self.coef)
        psi = np.zeros(n)
        psi[0] = 1.0
        for j in range(1, n):
            k = min(j, phi.size)
            psi[j] = np.dot(phi[:k], psi[j - 1 :: -1][:k])
        return psi

    def predict_batch(self, contexts, steps):
        c = self._check(contexts, steps)
        k = self.order
        phi = np.asarray(self.coef)
        hist = c[:, -k:][:, ::-1].copy()  # most recent first
        means = np.empty((c.shape[0], steps))
        for h in range(steps):
            m = self.intercept + hist @ phi
            means[:, h] = m
            hist = np.concatenate([m[:, None], hist[:, :-1]], axis=1)
        sd = self.sigma * np.sqrt(np.cumsum(self.psi(steps) ** 2))
        return Gaussian(means, np.broadcast_to(sd, means.shape))

    def params(self):
        return {"coef": list(self.coef), "intercept": self.intercept, "sigma": self.sigma}


@dataclass(frozen=True)
class Persistence(Forecaster):
    """Last value, widened by the RMS one-step change observed in the context."""

    kind = "persistence"

    @property
    def min_context(self):
        return 2

    def predict_batch(self, contexts, steps):
        c = self._check(contexts, steps)
        sd = np.sqrt(np.mean(np.diff(c, axis=1) ** 2, axis=1))
        shape = (c.shape[0], steps)
        return Gaussian(np.broadcast_to(c[:, -1:], shape), np.broadcast_to(sd[:, None], shape))


@dataclass(frozen=True)
class Climatology(Forecaster):
    """Marginal training distribution, identical for every step."""

    levels: tuple = DEFAULT_LEVELS.levels
    table: tuple = ()
    tail: str = "linear"
    kind = "climatology"

    def law(self) -> PiecewiseLinear:
        return PiecewiseLinear(np.asarray(self.levels), np.asarray(self.table), self.tail)

    def predict_batch(self, contexts, steps):
        c = self._check(contexts, steps)
        v = np.broadcast_to(np.asarray(self.table), (c.shape[0], steps, len(self.table)))
        return PiecewiseLinear(np.asarray(self.levels), v, self.tail)

    def params(self):
        return {"levels": list(self.levels), "table": list(self.table), "tail": self.tail}


@dataclass(frozen=True)
class QuantileOnly(Forecaster):
    """Exposes another forecaster only through its quantile grid.

    Mimics a model with a quantile head: the laws it returns are the
    piecewise-linear interpolation of the wrapped forecaster's quantiles.
    """

    base: Forecaster = field(default_factory=OracleIID)
    levels: QuantileLevels = DEFAULT_LEVELS
    tail: str = "linear"
    kind = "quantile_only"

    def __post_init__(self):
        object.__setattr__(self, "horizon", self.base.horizon)

    @property
    def min_context(self):
        return self.base.min_context

    def predict_quantiles_batch(self, contexts, steps) -> np.ndarray:
        return quantile_matrix(self.base.predict_batch(contexts, steps), self.levels)

    def predict_batch(self, contexts, steps):
        q = np.sort(self.predict_quantiles_batch(contexts, steps), axis=-1)
        return PiecewiseLinear(self.levels.array, q, self.tail)

    def params(self):
        return {"base": self.base.to_dict(), "levels": list(self.levels.levels), "tail": self.tail}


# -- fitting -----------------------------------------------------------------------------


def fit_linear_ar(values, order: int, horizon: int = 64) -> LinearAR:
    y = np.asarray(values, dtype=float)
    if order < 1:
        raise ValueError("AR order must be >= 1")
    if y.size <= order + 2:
        raise DataError(f"series of length {y.size} too short for AR({order})")
    n = y.size - order
    X = np.column_stack([y[order - i - 1 : order - i - 1 + n] for i in range(order)] + [np.ones(n)])
    target = y[order:]
    sol, _, rank, sv = np.linalg.lstsq(X, target, rcond=None)
    if rank < order + 1 or sv[-1] <= 1e-10 * sv[0]:
        raise DataError("singular AR design matrix (is the series constant?)")
    resid = target - X @ sol
    dof = max(n - order - 1, 1)
    sigma = max(float(np.sqrt(resid @ resid / dof)), SCALE_FLOOR)
    return LinearAR(horizon=horizon, coef=tuple(float(c) for c in sol[:-1]), intercept=float(sol[-1]), sigma=sigma)


def fit(
    kind: str,
    train: TimeSeries | np.ndarray,
    order: int = 1,
    p: int = 64,
    levels: QuantileLevels = DEFAULT_LEVELS,
    **params,
) -> Forecaster:
    """Fit (or, for oracles, simply construct) a forecaster of the given kind."""
    values = train.values if isinstance(train, TimeSeries) else np.asarray(train, dtype=float)
    if kind == "oracle_iid":
        return OracleIID(horizon=p, **params)
    if kind == "oracle_ar1":
        return OracleAR1(horizon=p, **params)
    if kind == "persistence":
        return Persistence(horizon=p)
    if values.size <= order + 2:
        raise DataError(f"training series of length {values.size} is too short")
    if kind == "linear_ar":
        return fit_linear_ar(values, order, p)
    if kind == "climatology":
        table = empirical_quantile(values, levels.array)
        return Climatology(horizon=p, levels=levels.levels, table=tuple(float(x) for x in table), **params)
    raise ValueError(f"unknown forecaster kind {kind!r}")


def from_dict(d: dict) -> Forecaster:
    kind, p, params = d["kind"], d["horizon"], dict(d.get("params", {}))
    if kind == "linear_ar":
        params["coef"] = tuple(params["coef"])
        return LinearAR(horizon=p, **params)
    if kind == "climatology":
        return Climatology(horizon=p, levels=tuple(params["levels"]), table=tuple(params["table"]), tail=params["tail"])
    if kind == "quantile_only":
        return QuantileOnly(base=from_dict(params["base"]), levels=QuantileLevels(tuple(params["levels"])), tail=params["tail"])
    cls = {"oracle_iid": OracleIID, "oracle_ar1": OracleAR1, "persistence": Persistence}[kind]
    return cls(horizon=p, **params)


# -- quantile extraction ------------------------------------------------------------------


def quantile_matrix(d: Distribution, levels: QuantileLevels) -> np.ndarray:
    """Quantiles of a batched law, with the level axis appended last."""
    shape = d.batch_shape
    return np.stack([np.broadcast_to(d.icdf(np.full(shape, q)), shape) for q in levels], axis=-1)


def quantiles_of(
    predictions, levels: QuantileLevels = DEFAULT_LEVELS, window: ForecastWindow | None = None
) -> QuantileForecast:
    """Per-step inverse CDF at each level."""
    if isinstance(predictions, Distribution):
        rows = quantile_matrix(predictions, levels)
    else:
        predictions = list(predictions)
        if not predictions:
            raise ValueError("no predictions given")
        rows = np.stack([quantile_matrix(d, levels).reshape(len(levels)) for d in predictions])
    return QuantileForecast.repaired(rows, levels, window=window)
