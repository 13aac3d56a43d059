"""Projection heads from a latent feature vector to a predictive law or quantile set.

Each head is an affine map ``z = W x + b`` followed by per-output links: identity
for locations and quantile values, softplus for scales, softmax for mixture
weights. Degrees of freedom of Student-t outputs are not trained by gradient; they
are chosen from :data:`tscalib.dist.DF_GRID` by validation likelihood.

Training is full-batch gradient descent with a fixed step that is halved whenever
a step would increase the loss, so the recorded loss never goes up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .core import DEFAULT_CONFIDENCES, DEFAULT_LEVELS, ConfidenceLevels, NumericError, QuantileForecast, QuantileLevels
from .dist import DF_GRID, SCALE_FLOOR, Gaussian, Laplace, LogNormal, Mixture, StudentT
from .forecasters import quantile_matrix
from .metrics import cce, pce, siw
from .streams import StreamFamily

HEAD_KINDS = ("quantile", "gaussian", "student_t", "mixture")
MIXTURE_COMPONENTS = ("gaussian", "student_t", "laplace", "lognormal")
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def softplus(u):
    return np.logaddexp(0.0, u) + SCALE_FLOOR


def softplus_inv(s: float) -> float:
    s = max(s - SCALE_FLOOR, 1e-12)
    return float(s + np.log(-np.expm1(-s)))


@dataclass
class HeadTrainConfig:
    lr: float = 0.1
    max_iter: int = 5000
    tol: float = 1e-8
    seed: int = 0
    batch_size: int | None = None
    checkpoint_every: int = 50
    df_grid: tuple = DF_GRID
    val_fraction: float = 0.2
    levels: QuantileLevels = DEFAULT_LEVELS
    # Student-t component of the mixture head; None selects it on df_grid like the student_t head
    mixture_df: float | None = 4.0

    def __post_init__(self):
        if self.lr <= 0 or self.max_iter < 1 or not (0 < self.tol < 1) or self.checkpoint_every < 1:
            raise ValueError("invalid head training configuration")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class Head:
    kind: str
    weight: np.ndarray
    bias: np.ndarray
    levels: QuantileLevels = DEFAULT_LEVELS
    df: float | None = None
    active: tuple = ()
    loss_trace: list = field(default_factory=list)
    final_loss: float = math.nan

    @property
    def n_features(self) -> int:
        return self.weight.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weight.shape[0]

    def raw(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weight.T + self.bias

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])

    def with_flat(self, theta: np.ndarray) -> "Head":
        k = self.weight.size
        h = Head(**{**self.__dict__})
        h.weight = theta[:k].reshape(self.weight.shape).copy()
        h.bias = theta[k:].copy()
        return h

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "shape": list(self.weight.shape),
            "weight": self.weight.ravel().tolist(),
            "bias": self.bias.tolist(),
            "links": _links(self.kind, self.n_outputs),
            "levels": list(self.levels.levels),
            "df": self.df,
            "active": list(self.active),
            "loss_trace": list(self.loss_trace),
            "final_loss": self.final_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Head":
        return cls(
            kind=d["kind"],
            weight=np.asarray(d["weight"], dtype=float).reshape(d["shape"]),
            bias=np.asarray(d["bias"], dtype=float),
            levels=QuantileLevels(tuple(d["levels"])),
            df=d.get("df"),
            active=tuple(d.get("active", ())),
            loss_trace=list(d.get("loss_trace", [])),
            final_loss=d.get("final_loss", math.nan),
        )


def _links(kind: str, n_out: int) -> list[str]:
    if kind == "quantile":
        return ["identity"] * n_out
    if kind in ("gaussian", "student_t"):
        return ["identity", "softplus"]
    k = n_out // 3
    return ["softmax"] * k + ["identity"] * k + ["softplus"] * k


def save_head(path, head: Head) -> None:
    Path(path).write_text(json.dumps(head.to_dict()))


def load_head(path) -> Head:
    return Head.from_dict(json.loads(Path(path).read_text()))


# -- losses and gradients with respect to the raw outputs -----------------------------------


def _gauss_terms(r, s):
    lp = -0.5 * (r / s) ** 2 - np.log(s) - _HALF_LOG_2PI
    return lp, r / s**2, -1 / s + r * r / s**3


def _t_terms(r, s, nu):
    c = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * np.log(nu * np.pi)
    den = nu * s * s + r * r
    lp = c - np.log(s) - (nu + 1) / 2 * np.log1p(r * r / (nu * s * s))
    return lp, (nu + 1) * r / den, -1 / s + (nu + 1) * r * r / (s * den)


def _laplace_terms(r, s):
    lp = -np.log(2 * s) - np.abs(r) / s
    return lp, np.sign(r) / s, -1 / s + np.abs(r) / s**2


def _lognormal_terms(y, m, s):
    pos = y > 0
    ly = np.log(np.where(pos, y, 1.0))
    r = ly - m
    lp = np.where(pos, -ly - np.log(s) - _HALF_LOG_2PI - 0.5 * (r / s) ** 2, -np.inf)
    return lp, np.where(pos, r / s**2, 0.0), np.where(pos, -1 / s + r * r / s**3, 0.0)


def loss_and_grad(head: Head, Z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient with respect to the raw outputs ``Z``."""
    n = y.size
    g = np.zeros_like(Z)
    if head.kind == "quantile":
        q = head.levels.array[None, :]
        over = Z >= y[:, None]
        loss = np.where(over, 2 * (1 - q) * (Z - y[:, None]), 2 * q * (y[:, None] - Z)).sum(1)
        g = np.where(over, 2 * (1 - q), -2 * q) / n
        return float(loss.mean()), g
    if head.kind in ("gaussian", "student_t"):
        mu, u = Z[:, 0], Z[:, 1]
        s = softplus(u)
        r = y - mu
        if head.kind == "gaussian":
            lp, dm, ds = _gauss_terms(r, s)
        else:
            lp, dm, ds = _t_terms(r, s, head.df)
        g[:, 0] = -dm / n
        g[:, 1] = -ds * special.expit(u) / n
        return float(-lp.mean()), g
    # mixture: [logits | locations | raw scales]
    k = len(MIXTURE_COMPONENTS)
    logits, m, u = Z[:, :k], Z[:, k : 2 * k], Z[:, 2 * k :]
    s = softplus(u)
    active = np.asarray(head.active, dtype=bool)
    masked = np.where(active[None, :], logits, -np.inf)
    logw = masked - special.logsumexp(masked, axis=1, keepdims=True)
    terms = [
        _gauss_terms(y - m[:, 0], s[:, 0]),
        _t_terms(y - m[:, 1], s[:, 1], head.df),
        _laplace_terms(y - m[:, 2], s[:, 2]),
        _lognormal_terms(y, m[:, 3], s[:, 3]),
    ]
    lp = np.stack([t[0] for t in terms], axis=1)
    lp = np.where(active[None, :], lp, -np.inf)
    joint = logw + lp
    ll = special.logsumexp(joint, axis=1)
    resp = np.exp(joint - ll[:, None])
    w = np.exp(logw)
    g[:, :k] = np.where(active[None, :], w - resp, 0.0) / n
    for j, (_, dm, ds) in enumerate(terms):
        if active[j]:
            g[:, k + j] = -resp[:, j] * dm / n
            g[:, 2 * k + j] = -resp[:, j] * ds * special.expit(u[:, j]) / n
    return float(-ll.mean()), g


def head_loss(head: Head, X, y) -> float:
    return loss_and_grad(head, head.raw(X), np.asarray(y, dtype=float))[0]


def head_gradient(head: Head, X, y) -> tuple[float, np.ndarray]:
    """Loss and gradient with respect to the flattened ``(W, b)`` parameters."""
    X = np.asarray(X, dtype=float)
    loss, gz = loss_and_grad(head, head.raw(X), np.asarray(y, dtype=float))
    return loss, np.concatenate([(gz.T @ X).ravel(), gz.sum(0)])


# -- initialisation and training -------------------------------------------------------------


def init_head(kind: str, n_features: int, y, cfg: HeadTrainConfig, df: float | None = None) -> Head:
    if kind not in HEAD_KINDS:
        raise ValueError(f"unknown head kind {kind!r}")
    y = np.asarray(y, dtype=float)
    loc, scale = float(np.mean(y)), max(float(np.std(y)), 1e-3)
    if kind == "quantile":
        bias = np.quantile(y, cfg.levels.array)
        active = ()
    elif kind in ("gaussian", "student_t"):
        bias = np.array([loc, softplus_inv(scale)])
        active = ()
    else:
        signed = bool(np.any(y <= 0))
        active = tuple(not (c == "lognormal" and signed) for c in MIXTURE_COMPONENTS)
        k = len(MIXTURE_COMPONENTS)
        locs = np.full(k, loc)
        scales = np.full(k, softplus_inv(scale))
        if active[3]:
            ly = np.log(y)
            locs[3], scales[3] = ly.mean(), softplus_inv(max(float(ly.std()), 1e-3))
        bias = np.concatenate([np.zeros(k), locs, scales])
    rng = StreamFamily(cfg.seed).stream("head-init", kind)
    weight = 0.01 * rng.normal((bias.size, n_features))
    if kind in ("student_t", "mixture") and df is None:
        df = cfg.df_grid[0]
    return Head(kind, weight, bias.astype(float), cfg.levels, df if kind in ("student_t", "mixture") else None, active)


def _fit(head: Head, X: np.ndarray, y: np.ndarray, cfg: HeadTrainConfig) -> Head:
    theta = head.flat()
    n = y.size
    sampler = StreamFamily(cfg.seed).stream("head-batch", head.kind) if cfg.batch_size else None

    def batch():
        if sampler is None or cfg.batch_size >= n:
            return X, y
        idx = (sampler.uniform(cfg.batch_size) * n).astype(int)
        return X[idx], y[idx]

    xb, yb = batch()
    loss, grad = head_gradient(head.with_flat(theta), xb, yb)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericError(f"head training diverged at iteration 0 (loss={loss})")
    trace = [loss]
    lr = cfg.lr
    for it in range(1, cfg.max_iter + 1):
        cand = theta - lr * grad
        c_loss, c_grad = head_gradient(head.with_flat(cand), xb, yb)
        if np.isfinite(c_loss) and c_loss <= loss and np.all(np.isfinite(c_grad)):
            improvement = loss - c_loss
            theta, loss, grad = cand, c_loss, c_grad
            if improvement <= cfg.tol * abs(loss) and sampler is None:
                break
        else:
            lr *= 0.5
            if lr < 1e-30:
                raise NumericError(f"head training diverged at iteration {it} (step size underflow)")
        if sampler is not None:
            xb, yb = batch()
            loss, grad = head_gradient(head.with_flat(theta), xb, yb)
        if it % cfg.checkpoint_every == 0:
            trace.append(loss)
    out = head.with_flat(theta)
    out.final_loss = head_loss(out, X, y)
    if not np.isfinite(out.final_loss):
        raise NumericError("head training produced a non-finite loss")
    out.loss_trace = trace + [out.final_loss]
    return out


def train_head(kind: str, features, targets, config: HeadTrainConfig = HeadTrainConfig()) -> Head:
    """Fit a head; Student-t degrees of freedom are picked by validation NLL over the grid."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("features must be an N x F matrix aligned with the targets")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("features and targets must be finite")
    n_out = {"quantile": len(config.levels), "gaussian": 2, "student_t": 2}.get(kind, 3 * len(MIXTURE_COMPONENTS))
    if kind not in HEAD_KINDS:
        raise ValueError(f"unknown head kind {kind!r}")
    if y.size < 10 * n_out:
        raise ValueError(f"need at least {10 * n_out} samples for a {kind} head, got {y.size}")
    if kind in ("quantile", "gaussian"):
        return _fit(init_head(kind, X.shape[1], y, config), X, y, config)
    if kind == "mixture" and config.mixture_df is not None:
        return _fit(init_head(kind, X.shape[1], y, config, config.mixture_df), X, y, config)
    n_val = max(1, int(round(config.val_fraction * y.size)))
    Xt, yt, Xv, yv = X[:-n_val], y[:-n_val], X[-n_val:], y[-n_val:]
    best = None
    for df in sorted(config.df_grid):
        h = _fit(init_head(kind, X.shape[1], yt, config, df), Xt, yt, config)
        val = head_loss(h, Xv, yv)
        if best is None or val < best[0]:
            best = (val, h)
    return best[1]


# -- prediction ---------------------------------------------------------------------------


def predict_head_batch(head: Head, features):
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != head.n_features:
        raise ValueError(f"expected features of width {head.n_features}")
    Z = head.raw(X)
    if head.kind == "quantile":
        return QuantileForecast.repaired(Z, head.levels)
    if head.kind == "gaussian":
        return Gaussian(Z[:, 0], softplus(Z[:, 1]))
    if head.kind == "student_t":
        return StudentT(Z[:, 0], softplus(Z[:, 1]), head.df)
    k = len(MIXTURE_COMPONENTS)
    active = np.asarray(head.active, dtype=bool)
    logits = np.where(active[None, :], Z[:, :k], -np.inf)
    w = special.softmax(logits, axis=1)
    w = w / w.sum(1, keepdims=True)
    m, s = Z[:, k : 2 * k], softplus(Z[:, 2 * k :])
    comps = (
        Gaussian(m[:, 0], s[:, 0]),
        StudentT(m[:, 1], s[:, 1], head.df),
        Laplace(m[:, 2], s[:, 2]),
        LogNormal(m[:, 3], s[:, 3]),
    )
    return Mixture(w, comps)


def predict_head(head: Head, feature):
    """One prediction: a quantile row ``(values, repaired)`` or a predictive law."""
    x = np.asarray(feature, dtype=float)
    if x.ndim != 1 or x.size != head.n_features:
        raise ValueError(f"expected a feature vector of length {head.n_features}")
    out = predict_head_batch(head, x[None, :])
    if head.kind == "quantile":
        return out.values[0], out.crossing_repaired
    return out[0]


def head_quantiles(head: Head, features, levels: QuantileLevels = DEFAULT_LEVELS) -> QuantileForecast:
    out = predict_head_batch(head, features)
    if head.kind == "quantile":
        return out
    return QuantileForecast.repaired(quantile_matrix(out, levels), levels)


def evaluate_head(
    head: Head, features, targets, levels: QuantileLevels = DEFAULT_LEVELS, conf: ConfidenceLevels = DEFAULT_CONFIDENCES
) -> dict:
    """PCE/CCE/SIW over a test set, treating each sample as one forecast step."""
    fc = head_quantiles(head, features, levels)
    y = np.asarray(targets, dtype=float)
    return {"pce": pce(fc, y, levels), "cce": cce(fc, y, conf), "siw": siw(fc, y, conf)}


# -- gradient check -----------------------------------------------------------------------


def gradient_check(head: Head, batch, step: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Samples within ``10 * step`` (scaled by the feature magnitude) of a loss kink
    are dropped first: pinball kinks for quantile heads and the Laplace kink for
    mixture heads. Relative error is measured against
    ``max(|analytic|, |numeric|, floor)`` with ``floor = 1e-6 + 1e-4 * (1 + |L|)``:
    central differences of a loss of size ``L`` carry roundoff near
    ``eps * L / step``, which would otherwise dominate near-zero components.
    """
    X, y = (np.asarray(a, dtype=float) for a in batch)
    if y.size < 1:
        raise ValueError("empty batch")
    Z = head.raw(X)
    margin = 10 * step * (1 + np.abs(X).sum(1))
    if head.kind == "quantile":
        keep = np.all(np.abs(Z - y[:, None]) > margin[:, None], axis=1)
    elif head.kind == "mixture":
        k = len(MIXTURE_COMPONENTS)
        keep = np.abs(y - Z[:, k + 2]) > margin
    else:
        keep = np.ones(y.size, dtype=bool)
    X, y = X[keep], y[keep]
    if y.size == 0:
        return 0.0
    loss, analytic = head_gradient(head, X, y)
    theta = head.flat()
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        numeric[i] = (head_loss(head.with_flat(theta + e), X, y) - head_loss(head.with_flat(theta - e), X, y)) / (2 * step)
    floor = 1e-6 + 1e-4 * (1 + abs(loss))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- head-swap experiment ------------------------------------------------------------------


def compare_heads(
    train: tuple, test: tuple, config: HeadTrainConfig = HeadTrainConfig(), kinds=HEAD_KINDS
) -> dict[str, dict]:
    """Train each head kind on ``train=(X, y)`` and score it on ``test=(X, y)``."""
    out = {}
    for kind in kinds:
        head = train_head(kind, *train, config)
        res = evaluate_head(head, *test, config.levels)
        res["df"] = head.df
        res["final_loss"] = head.final_loss
        out[kind] = res
    return out
