"""Predictive distribution families.

All parameters are numpy arrays that broadcast against each other, so a single
object can describe one law or a whole batch of them (for example one law per
trajectory and forecast step). Methods act elementwise over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .core import QuantileLevels
from .streams import RandomStream

SCALE_FLOOR = 1e-9
DF_GRID = (2.1, 2.5, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0)
_LOG_2PI = np.log(2.0 * np.pi)


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _scale(x) -> np.ndarray:
    return np.maximum(_arr(x), SCALE_FLOOR)


def _check_y(y) -> np.ndarray:
    y = _arr(y)
    if not np.all(np.isfinite(y)):
        raise ValueError("distribution evaluated at a non-finite point")
    return y


def _check_p(p) -> np.ndarray:
    p = _arr(p)
    if np.any((p <= 0.0) | (p >= 1.0)) or np.isnan(p).any():
        raise ValueError("icdf probability must lie in the open interval (0, 1)")
    return p


class Distribution:
    family: str = ""

    def log_density(self, y):
        raise NotImplementedError

    def cdf(self, y):
        raise NotImplementedError

    def icdf(self, p):
        raise NotImplementedError

    def mean(self):
        raise NotImplementedError

    @property
    def batch_shape(self) -> tuple:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": {k: np.asarray(v).tolist() for k, v in self.params().items()},
        }

    def __getitem__(self, idx) -> "Distribution":
        """Slice the batch, e.g. ``d[:, h]`` for forecast step ``h``."""
        raise NotImplementedError

    def median(self):
        return self.icdf(np.full(self.batch_shape, 0.5))


@dataclass(frozen=True)
class Gaussian(Distribution):
    mu: np.ndarray
    sigma: np.ndarray
    family = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "mu", _arr(self.mu))
        object.__setattr__(self, "sigma", _scale(self.sigma))

    @property
    def batch_shape(self):
        return np.broadcast_shapes(self.mu.shape, self.sigma.shape)

    def log_density(self, y):
        z = (_check_y(y) - self.mu) / self.sigma
        return -0.5 * z * z - np.log(self.sigma) - 0.5 * _LOG_2PI

    def cdf(self, y):
        return special.ndtr((_check_y(y) - self.mu) / self.sigma)

    def icdf(self, p):
        return self.mu + self.sigma * special.ndtri(_check_p(p))

    def mean(self):
        return np.broadcast_to(self.mu, self.batch_shape)

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}

    def __getitem__(self, idx):
        b = self.batch_shape
        return Gaussian(np.broadcast_to(self.mu, b)[idx], np.broadcast_to(self.sigma, b)[idx])


@dataclass(frozen=True)
class StudentT(Distribution):
    mu: np.ndarray
    sigma: np.ndarray
    df: np.ndarray
    family = "student_t"

    def __post_init__(self):
        object.__setattr__(self, "mu", _arr(self.mu))
        object.__setattr__(self, "sigma", _scale(self.sigma))
        df = _arr(self.df)
        if np.any(df <= 1.0):
            raise ValueError("Student-t degrees of freedom must exceed 1")
        object.__setattr__(self, "df", df)

    @property
    def batch_shape(self):
        return np.broadcast_shapes(self.mu.shape, self.sigma.shape, self.df.shape)

    def log_density(self, y):
        z = (_check_y(y) - self.mu) / self.sigma
        nu = self.df
        return (
            special.gammaln((nu + 1) / 2)
            - special.gammaln(nu / 2)
            - 0.5 * np.log(nu * np.pi)
            - np.log(self.sigma)
            - (nu + 1) / 2 * np.log1p(z * z / nu)
        )

    def cdf(self, y):
        return special.stdtr(self.df, (_check_y(y) - self.mu) / self.sigma)

    def icdf(self, p):
        return self.mu + self.sigma * special.stdtrit(self.df, _check_p(p))

    def mean(self):
        return np.broadcast_to(self.mu, self.batch_shape)

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma, "df": self.df}

    def __getitem__(self, idx):
        b = self.batch_shape
        return StudentT(*(np.broadcast_to(a, b)[idx] for a in (self.mu, self.sigma, self.df)))


@dataclass(frozen=True)
class Laplace(Distribution):
    mu: np.ndarray
    b: np.ndarray
    family = "laplace"

    def __post_init__(self):
        object.__setattr__(self, "mu", _arr(self.mu))
        object.__setattr__(self, "b", _scale(self.b))

    @property
    def batch_shape(self):
        return np.broadcast_shapes(self.mu.shape, self.b.shape)

    def log_density(self, y):
        return -np.log(2 * self.b) - np.abs(_check_y(y) - self.mu) / self.b

    def cdf(self, y):
        z = (_check_y(y) - self.mu) / self.b
        return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0)), 1 - 0.5 * np.exp(-np.maximum(z, 0)))

    def icdf(self, p):
        p = _check_p(p)
        return self.mu - self.b * np.sign(p - 0.5) * np.log1p(-2 * np.abs(p - 0.5))

    def mean(self):
        return np.broadcast_to(self.mu, self.batch_shape)

    def params(self):
        return {"mu": self.mu, "b": self.b}

    def __getitem__(self, idx):
        s = self.batch_shape
        return Laplace(np.broadcast_to(self.mu, s)[idx], np.broadcast_to(self.b, s)[idx])


@dataclass(frozen=True)
class LogNormal(Distribution):
    """Law of ``exp(X)`` for ``X ~ N(mu, sigma)``; support is ``y > 0``."""

    mu: np.ndarray
    sigma: np.ndarray
    family = "lognormal"

    def __post_init__(self):
        object.__setattr__(self, "mu", _arr(self.mu))
        object.__setattr__(self, "sigma", _scale(self.sigma))

    @property
    def batch_shape(self):
        return np.broadcast_shapes(self.mu.shape, self.sigma.shape)

    def log_density(self, y):
        y = _check_y(y)
        pos = y > 0
        ly = np.log(np.where(pos, y, 1.0))
        z = (ly - self.mu) / self.sigma
        lp = -0.5 * z * z - np.log(self.sigma) - 0.5 * _LOG_2PI - ly
        return np.where(pos, lp, -np.inf)

    def cdf(self, y):
        y = _check_y(y)
        pos = y > 0
        z = (np.log(np.where(pos, y, 1.0)) - self.mu) / self.sigma
        return np.where(pos, special.ndtr(z), 0.0)

    def icdf(self, p):
        return np.exp(self.mu + self.sigma * special.ndtri(_check_p(p)))

    def mean(self):
        return np.broadcast_to(np.exp(self.mu + 0.5 * self.sigma**2), self.batch_shape)

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}

    def __getitem__(self, idx):
        s = self.batch_shape
        return LogNormal(np.broadcast_to(self.mu, s)[idx], np.broadcast_to(self.sigma, s)[idx])


@dataclass(frozen=True)
class Mixture(Distribution):
    """Finite mixture; ``weights`` has the component axis last."""

    weights: np.ndarray
    components: tuple
    family = "mixture"

    def __post_init__(self):
        w = _arr(self.weights)
        comps = tuple(self.components)
        if w.shape[-1] != len(comps):
            raise ValueError("one weight per mixture component required")
        if np.any(w < 0) or not np.allclose(w.sum(-1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("mixture weights must lie on the probability simplex")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def batch_shape(self):
        return np.broadcast_shapes(self.weights.shape[:-1], *(c.batch_shape for c in self.components))

    def _w(self):
        return np.moveaxis(self.weights, -1, 0)

    def log_density(self, y):
        y = _check_y(y)
        with np.errstate(divide="ignore"):
            logw = np.log(self._w())
        terms = np.stack([lw + c.log_density(y) for lw, c in zip(logw, self.components)])
        return special.logsumexp(terms, axis=0)

    def cdf(self, y):
        y = _check_y(y)
        return sum(w * c.cdf(y) for w, c in zip(self._w(), self.components))

    def icdf(self, p, iterations: int = 200):
        p = _check_p(p)
        shape = np.broadcast_shapes(p.shape, self.batch_shape)
        p = np.broadcast_to(p, shape)
        w = [np.broadcast_to(wk, shape) for wk in self._w()]
        qs = [np.broadcast_to(c.icdf(p), shape) for c in self.components]
        # the mixture quantile lies between the extreme component quantiles
        lo = np.min([np.where(wk > 0, q, np.inf) for wk, q in zip(w, qs)], axis=0)
        hi = np.max([np.where(wk > 0, q, -np.inf) for wk, q in zip(w, qs)], axis=0)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-15 * np.maximum(1.0, np.abs(hi))):
                break
        return hi

    def mean(self):
        return sum(w * c.mean() for w, c in zip(self._w(), self.components))

    def params(self):
        return {"weights": self.weights}

    def to_dict(self):
        return {
            "family": self.family,
            "params": {"weights": self.weights.tolist()},
            "components": [c.to_dict() for c in self.components],
        }

    def __getitem__(self, idx):
        s = self.batch_shape
        w = np.broadcast_to(self.weights, s + (len(self.components),))[idx]
        return Mixture(w, tuple(c[idx] if c.batch_shape else c for c in self.components))


@dataclass(frozen=True)
class PiecewiseLinear(Distribution):
    """Distribution whose quantile function interpolates ``(level, value)`` knots.

    Beyond the outer knots the quantile function continues linearly with the slope
    of the outermost segment until probability 0 and 1 (``tail="linear"``), or stays
    flat, putting point masses on the outer knots (``tail="clamp"``).
    """

    levels: np.ndarray
    values: np.ndarray
    tail: str = "linear"
    family = "piecewise_linear"
    _xk: np.ndarray = field(init=False, repr=False, compare=False)
    _pk: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lv = _arr(self.levels)
        v = _arr(self.values)
        if lv.ndim != 1 or lv.size < 2 or v.shape[-1] != lv.size:
            raise ValueError("piecewise-linear law needs >= 2 levels and matching knot values")
        if np.any(np.diff(v, axis=-1) < 0):
            raise ValueError("piecewise-linear knots must be non-decreasing")
        if self.tail not in ("linear", "clamp"):
            raise ValueError(f"unknown tail rule {self.tail!r}")
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "values", v)
        if self.tail == "linear":
            lo_slope = (v[..., 1] - v[..., 0]) / (lv[1] - lv[0])
            hi_slope = (v[..., -1] - v[..., -2]) / (lv[-1] - lv[-2])
            x0 = v[..., 0] - lv[0] * lo_slope
            x1 = v[..., -1] + (1 - lv[-1]) * hi_slope
        else:
            x0, x1 = v[..., 0], v[..., -1]
        xk = np.concatenate([x0[..., None], v, x1[..., None]], axis=-1)
        object.__setattr__(self, "_xk", xk)
        object.__setattr__(self, "_pk", np.concatenate([[0.0], lv, [1.0]]))

    @property
    def batch_shape(self):
        return self.values.shape[:-1]

    def icdf(self, p):
        p = _check_p(p)
        shape = np.broadcast_shapes(p.shape, self.batch_shape)
        p = np.broadcast_to(p, shape)
        pk = self._pk
        i = np.clip(np.searchsorted(pk, p, side="right") - 1, 0, pk.size - 2)
        xk = np.broadcast_to(self._xk, shape + (pk.size,))
        xa = np.take_along_axis(xk, i[..., None], -1)[..., 0]
        xb = np.take_along_axis(xk, i[..., None] + 1, -1)[..., 0]
        return xa + (p - pk[i]) * (xb - xa) / (pk[i + 1] - pk[i])

    def _segment(self, y):
        y = _check_y(y)
        shape = np.broadcast_shapes(y.shape, self.batch_shape)
        y = np.broadcast_to(y, shape)
        xk = np.broadcast_to(self._xk, shape + (self._pk.size,))
        j = (xk <= y[..., None]).sum(-1) - 1
        return y, xk, j

    def cdf(self, y):
        y, xk, j = self._segment(y)
        pk = self._pk
        last = pk.size - 1
        jj = np.clip(j, 0, last - 1)
        xa = np.take_along_axis(xk, jj[..., None], -1)[..., 0]
        xb = np.take_along_axis(xk, jj[..., None] + 1, -1)[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = pk[jj] + (y - xa) / (xb - xa) * (pk[jj + 1] - pk[jj])
        return np.where(j < 0, 0.0, np.where(j >= last, 1.0, inner))

    def log_density(self, y):
        y, xk, j = self._segment(y)
        pk = self._pk
        last = pk.size - 1
        jj = np.clip(j, 0, last - 1)
        xa = np.take_along_axis(xk, jj[..., None], -1)[..., 0]
        xb = np.take_along_axis(xk, jj[..., None] + 1, -1)[..., 0]
        with np.errstate(divide="ignore"):
            lp = np.log(pk[jj + 1] - pk[jj]) - np.log(xb - xa)
        return np.where((j < 0) | (j >= last), -np.inf, lp)

    def mean(self):
        xk, pk = self._xk, self._pk
        return (np.diff(pk) * 0.5 * (xk[..., 1:] + xk[..., :-1])).sum(-1)

    def params(self):
        return {"levels": self.levels, "values": self.values}

    def to_dict(self):
        d = super().to_dict()
        d["params"]["tail"] = self.tail
        return d

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return PiecewiseLinear(self.levels, self.values[idx + (slice(None),)], self.tail)


# -- module-level operations ------------------------------------------------------------


def log_density(d: Distribution, y):
    return d.log_density(y)


def cdf(d: Distribution, y):
    return d.cdf(y)


def icdf(d: Distribution, p):
    return d.icdf(p)


def sample(d: Distribution, stream: RandomStream, size=None):
    """Inverse-transform draw(s) from ``d`` using the next uniforms of ``stream``."""
    if size is None:
        size = d.batch_shape or None
    u = stream.uniform(size)
    out = d.icdf(u)
    return float(out) if np.ndim(out) == 0 else out


def piecewise_from_quantiles(levels, values, tail: str = "linear") -> PiecewiseLinear:
    lv = levels.array if isinstance(levels, QuantileLevels) else _arr(levels)
    v = _arr(values)
    if v.shape[-1] != lv.size:
        raise ValueError("need one knot value per quantile level")
    if np.any(np.diff(v, axis=-1) < 0):
        raise ValueError("quantile values cross; repair them before building a law")
    return PiecewiseLinear(lv, v, tail)


def from_dict(d: dict) -> Distribution:
    fam = d["family"]
    p = d["params"]
    if fam == "gaussian":
        return Gaussian(p["mu"], p["sigma"])
    if fam == "student_t":
        return StudentT(p["mu"], p["sigma"], p["df"])
    if fam == "laplace":
        return Laplace(p["mu"], p["b"])
    if fam == "lognormal":
        return LogNormal(p["mu"], p["sigma"])
    if fam == "piecewise_linear":
        return PiecewiseLinear(p["levels"], p["values"], p.get("tail", "linear"))
    if fam == "mixture":
        return Mixture(p["weights"], tuple(from_dict(c) for c in d["components"]))
    raise ValueError(f"unknown distribution family {fam!r}")


# -- maximum-likelihood fits -----------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    df_grid: Sequence[float] = DF_GRID
    components: Sequence[str] = ("gaussian", "student_t", "laplace", "lognormal")
    mixture_df: float = 4.0
    max_iter: int = 200
    tol: float = 1e-8
    irls_iter: int = 500


def _weighted_median(y: np.ndarray, w: np.ndarray) -> float:
    order = np.argsort(y, kind="stable")
    cw = np.cumsum(w[order])
    return float(y[order][np.searchsorted(cw, 0.5 * cw[-1])])


def _fit_t_fixed_df(y: np.ndarray, df: float, iters: int) -> tuple[float, float]:
    mu = float(np.median(y))
    sigma = max(1.4826 * float(np.median(np.abs(y - mu))), float(np.std(y)) * 0.5, SCALE_FLOOR)
    for _ in range(iters):
        z2 = ((y - mu) / sigma) ** 2
        u = (df + 1) / (df + z2)
        mu_new = float(np.sum(u * y) / np.sum(u))
        sigma_new = max(float(np.sqrt(np.mean(u * (y - mu_new) ** 2))), SCALE_FLOOR)
        done = abs(mu_new - mu) <= 1e-13 * (abs(mu) + sigma) and abs(sigma_new - sigma) <= 1e-13 * sigma
        mu, sigma = mu_new, sigma_new
        if done:
            break
    return mu, sigma


def fit_student_t(data, df_grid: Sequence[float] = DF_GRID, iters: int = 500) -> StudentT:
    """Profile likelihood over ``df_grid``; location/scale by iteratively reweighted updates."""
    y = _arr(data)
    best = None
    for df in df_grid:
        mu, sigma = _fit_t_fixed_df(y, df, iters)
        ll = float(np.sum(StudentT(mu, sigma, df).log_density(y)))
        if best is None or ll > best[0]:
            best = (ll, mu, sigma, df)
    _, mu, sigma, df = best
    return StudentT(mu, sigma, df)


def _component_init(name: str, y: np.ndarray, loc: float, scale: float, df: float) -> Distribution:
    if name == "gaussian":
        return Gaussian(loc, scale)
    if name == "student_t":
        return StudentT(loc, scale, df)
    if name == "laplace":
        return Laplace(loc, scale / np.sqrt(2))
    if name == "lognormal":
        pos = y[y > 0]
        if pos.size < 2:
            return LogNormal(0.0, 1.0)
        return LogNormal(float(np.mean(np.log(pos))), float(np.std(np.log(pos))))
    raise ValueError(f"unknown mixture component {name!r}")


def _component_mstep(comp: Distribution, y: np.ndarray, r: np.ndarray) -> Distribution:
    rs = r.sum()
    if rs <= 0:
        return comp
    if isinstance(comp, Gaussian):
        mu = float(np.sum(r * y) / rs)
        return Gaussian(mu, np.sqrt(np.sum(r * (y - mu) ** 2) / rs))
    if isinstance(comp, StudentT):
        df = float(comp.df)
        z2 = ((y - comp.mu) / comp.sigma) ** 2
        u = (df + 1) / (df + z2)
        mu = float(np.sum(r * u * y) / np.sum(r * u))
        return StudentT(mu, np.sqrt(np.sum(r * u * (y - mu) ** 2) / rs), df)
    if isinstance(comp, Laplace):
        mu = _weighted_median(y, r)
        return Laplace(mu, np.sum(r * np.abs(y - mu)) / rs)
    if isinstance(comp, LogNormal):
        ly = np.log(y)
        mu = float(np.sum(r * ly) / rs)
        return LogNormal(mu, np.sqrt(np.sum(r * (ly - mu) ** 2) / rs))
    raise TypeError(type(comp))


def fit_mixture_em(data, config: FitConfig = FitConfig()) -> tuple[Mixture, list[float]]:
    """EM fit of a mixture over ``config.components``; returns the law and the log-likelihood trace."""
    y = _arr(data)
    names = list(config.components)
    k = len(names)
    if y.size < 2 * k:
        raise ValueError(f"mixture fit needs at least {2 * k} points, got {y.size}")
    signed = np.any(y <= 0)
    scale = max(float(np.std(y)), SCALE_FLOOR)
    locs = np.quantile(y, (np.arange(k) + 1) / (k + 1))
    comps = [_component_init(n, y, float(l), scale, config.mixture_df) for n, l in zip(names, locs)]
    active = np.array([not (n == "lognormal" and signed) for n in names])
    if not active.any():
        raise ValueError("no usable mixture component for this data")
    w = active / active.sum()
    trace: list[float] = []
    for _ in range(config.max_iter):
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        # inactive log-normal components are never evaluated on y <= 0
        lp = np.stack([
            lw + (c.log_density(y) if a else np.full(y.shape, -np.inf))
            for lw, c, a in zip(logw, comps, active)
        ])
        ll_i = special.logsumexp(lp, axis=0)
        ll = float(ll_i.sum())
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= config.tol * abs(trace[-2]):
            break
        resp = np.exp(lp - ll_i)
        w = resp.sum(1) / y.size
        w = np.where(active, w, 0.0)
        w = w / w.sum()
        comps = [_component_mstep(c, y, r) if a else c for c, r, a in zip(comps, resp, active)]
    return Mixture(w, tuple(comps)), trace


def fit_mle(family: str, data, config: FitConfig = FitConfig()) -> Distribution:
    y = _arr(data)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("maximum-likelihood fit needs at least two observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("fit data must be finite")
    if family == "gaussian":
        return Gaussian(float(np.mean(y)), float(np.std(y)))
    if family == "student_t":
        return fit_student_t(y, config.df_grid, config.irls_iter)
    if family == "laplace":
        mu = float(np.median(y))
        return Laplace(mu, float(np.mean(np.abs(y - mu))))
    if family == "lognormal":
        if np.any(y <= 0):
            raise ValueError("log-normal fit requires strictly positive data")
        ly = np.log(y)
        return LogNormal(float(np.mean(ly)), float(np.std(ly)))
    if family == "mixture":
        return fit_mixture_em(y, config)[0]
    raise ValueError(f"unknown family {family!r}")
