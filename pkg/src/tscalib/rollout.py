"""Long-horizon forecasts from a forecaster with native horizon ``p < H``.

Strategies:

* ``naive``: one context, extended with the median (or mean) of each patch.
* ``branching``: ``|Q|`` contexts, one per quantile level; each patch yields
  ``|Q|^2`` values per step which are reduced back to ``|Q|`` quantiles.
* ``trajectory``: ``n`` sampled paths, each extended with its own draws.
* ``exact``: closed-form multi-step laws (AR(1) oracle only).

Each forecast carries provenance including ``step_forecasts``, the number of
contexts for which each output step was predicted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_LEVELS, ForecastWindow, QuantileForecast, QuantileLevels, empirical_quantile
from .dist import Distribution, piecewise_from_quantiles
from .forecasters import Forecaster, OracleAR1, quantile_matrix
from .streams import StreamFamily

STRATEGIES = ("naive", "branching", "trajectory", "exact")


@dataclass(frozen=True)
class RolloutConfig:
    strategy: str = "naive"
    patch: int = 64
    horizon: int = 256
    point_rule: str = "median"
    n_trajectories: int = 100
    levels: QuantileLevels = DEFAULT_LEVELS
    seed: int = 0
    max_context: int | None = None
    tail: str = "linear"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown rollout strategy {self.strategy!r}")
        if not (1 <= self.patch) or self.horizon < 1:
            raise ValueError("patch and horizon must be >= 1")
        if self.strategy != "exact" and self.horizon < self.patch:
            raise ValueError("rollout horizon must be >= patch length")
        if self.point_rule not in ("median", "mean"):
            raise ValueError(f"unknown point rule {self.point_rule!r}")
        if self.strategy == "trajectory" and self.n_trajectories < 2:
            raise ValueError("trajectory rollout needs at least 2 trajectories")


def _extend(contexts: np.ndarray, new: np.ndarray, max_context: int | None) -> np.ndarray:
    out = np.concatenate([contexts, new], axis=1)
    return out[:, -max_context:] if max_context else out


def _law(f: Forecaster, contexts: np.ndarray, steps: int, cfg: RolloutConfig) -> Distribution:
    quantile_fn = getattr(f, "predict_quantiles_batch", None)
    if quantile_fn is None:
        return f.predict_batch(contexts, steps)
    q = np.sort(quantile_fn(contexts, steps), axis=-1)
    return piecewise_from_quantiles(f.levels, q, cfg.tail)


def _patch_steps(f: Forecaster, cfg: RolloutConfig):
    if cfg.patch > f.horizon:
        raise ValueError(f"patch {cfg.patch} exceeds the forecaster's native horizon {f.horizon}")
    h0 = 0
    while h0 < cfg.horizon:
        steps = min(cfg.patch, cfg.horizon - h0)
        yield h0, steps
        h0 += steps


def _finish(values, cfg, counts, window, **extra) -> QuantileForecast:
    prov = {
        "strategy": cfg.strategy,
        "patch": cfg.patch,
        "seed": cfg.seed,
        "invocations": int(extra.pop("invocations")),
        "step_forecasts": [int(c) for c in counts],
    }
    prov.update(extra)
    return QuantileForecast.repaired(values, cfg.levels, window=window, provenance=prov)


def rollout_naive(f: Forecaster, context, cfg: RolloutConfig, window: ForecastWindow | None = None) -> QuantileForecast:
    ctx = np.asarray(context, dtype=float)[None, :]
    rows, counts, calls = [], np.zeros(cfg.horizon, dtype=int), 0
    for h0, steps in _patch_steps(f, cfg):
        d = _law(f, ctx, steps, cfg)
        calls += 1
        rows.append(quantile_matrix(d, cfg.levels)[0])
        counts[h0 : h0 + steps] += 1
        point = d.median() if cfg.point_rule == "median" else d.mean()
        ctx = _extend(ctx, np.asarray(point).reshape(1, steps), cfg.max_context)
    return _finish(np.concatenate(rows), cfg, counts, window, invocations=calls)


def branch_candidates(f: Forecaster, contexts: np.ndarray, steps: int, cfg: RolloutConfig) -> np.ndarray:
    """All ``|contexts| * |Q|`` quantile values per step, shape ``(steps, |contexts| * |Q|)``."""
    q = quantile_matrix(_law(f, contexts, steps, cfg), cfg.levels)  # (contexts, steps, |Q|)
    return q.transpose(1, 0, 2).reshape(steps, -1)


def rollout_branching(f: Forecaster, context, cfg: RolloutConfig, window: ForecastWindow | None = None) -> QuantileForecast:
    k = len(cfg.levels)
    base = np.asarray(context, dtype=float)[None, :]
    rows, counts, calls = [], np.zeros(cfg.horizon, dtype=int), 0
    contexts = None
    for h0, steps in _patch_steps(f, cfg):
        if contexts is None:
            patch = quantile_matrix(_law(f, base, steps, cfg), cfg.levels)[0]
            calls += 1
            counts[h0 : h0 + steps] += 1
            contexts = np.repeat(base, k, axis=0)
        else:
            cand = branch_candidates(f, contexts, steps, cfg)
            calls += k
            counts[h0 : h0 + steps] += k
            patch = empirical_quantile(cand, cfg.levels.array)  # (steps, |Q|)
        rows.append(patch)
        # context i is extended with the values at level i
        contexts = _extend(contexts, patch.T, cfg.max_context)
    return _finish(np.concatenate(rows), cfg, counts, window, invocations=calls)


def rollout_trajectory(
    f: Forecaster,
    context,
    cfg: RolloutConfig,
    rng: StreamFamily | None = None,
    window: ForecastWindow | None = None,
) -> QuantileForecast:
    rng = rng if rng is not None else StreamFamily(cfg.seed)
    n = cfg.n_trajectories
    streams = [rng.stream("traj", i) for i in range(n)]
    ctx = np.repeat(np.asarray(context, dtype=float)[None, :], n, axis=0)
    paths = np.empty((n, cfg.horizon))
    counts, calls = np.zeros(cfg.horizon, dtype=int), 0
    for h0, steps in _patch_steps(f, cfg):
        d = _law(f, ctx, steps, cfg)
        calls += n
        counts[h0 : h0 + steps] += n
        u = np.stack([s.uniform(steps) for s in streams])
        draws = d.icdf(u)
        paths[:, h0 : h0 + steps] = draws
        ctx = _extend(ctx, draws, cfg.max_context)
    values = empirical_quantile(paths.T, cfg.levels.array)
    return _finish(values, cfg, counts, window, invocations=calls, n_trajectories=n)


def rollout_exact(f: Forecaster, context, cfg: RolloutConfig, window: ForecastWindow | None = None) -> QuantileForecast:
    if not isinstance(f, OracleAR1):
        raise TypeError("exact rollout is only available for the AR(1) oracle")
    d = f.exact(np.asarray(context, dtype=float)[None, :], cfg.horizon)
    counts = np.ones(cfg.horizon, dtype=int)
    return _finish(quantile_matrix(d, cfg.levels)[0], cfg, counts, window, invocations=1)


def rollout(
    f: Forecaster,
    context,
    cfg: RolloutConfig,
    rng: StreamFamily | None = None,
    window: ForecastWindow | None = None,
) -> QuantileForecast:
    if cfg.strategy == "naive":
        return rollout_naive(f, context, cfg, window)
    if cfg.strategy == "branching":
        return rollout_branching(f, context, cfg, window)
    if cfg.strategy == "trajectory":
        return rollout_trajectory(f, context, cfg, rng, window)
    return rollout_exact(f, context, cfg, window)
