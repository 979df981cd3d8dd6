"""Conditional Gaussian linear prediction and the zeroth-order residual workflow."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .cov_est import FrameSeries
from .errors import ConditioningError, DataError, UsageError
from .kron_core import StDims

__all__ = [
    "PredictionTask",
    "LinearPredictor",
    "build_task_forward",
    "build_task_partial",
    "fit_predictor",
    "predict",
    "zeroth_order_residuals",
    "reconstruct_from_residual",
]


@dataclass(frozen=True)
class PredictionTask:
    """Disjoint observed (x) and target (y) variable index sets, 0-based."""

    x_idx: np.ndarray
    y_idx: np.ndarray
    dims: StDims

    def __post_init__(self):
        x = np.asarray(self.x_idx, dtype=int)
        y = np.asarray(self.y_idx, dtype=int)
        if x.size == 0 or y.size == 0:
            raise UsageError("both x_idx and y_idx must be non-empty")
        d = self.dims.d
        for name, idx in (("x_idx", x), ("y_idx", y)):
            if idx.min() < 0 or idx.max() >= d:
                raise UsageError(f"{name} contains indices outside [0, {d - 1}]")
            if len(set(idx.tolist())) != idx.size:
                raise UsageError(f"{name} contains duplicates")
        if set(x.tolist()) & set(y.tolist()):
            raise UsageError("x_idx and y_idx must be disjoint")
        object.__setattr__(self, "x_idx", x)
        object.__setattr__(self, "y_idx", y)


@dataclass(frozen=True)
class LinearPredictor:
    """Affine conditional-mean predictor y_hat = A (x - mu_x) + mu_y."""

    coeffs: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    cond_cov: np.ndarray


def build_task_forward(dims: StDims, ahead: int, history: int) -> PredictionTask:
    """Forward task: observe the first ``history`` frames, predict the last frame.

    Requires history + ahead == p, so the target sits ``ahead`` frames past the
    observed part of the window.
    """
    if history < 1 or ahead < 1:
        raise UsageError(f"history and ahead must be >= 1, got {history}, {ahead}")
    if history + ahead != dims.p:
        raise UsageError(f"history + ahead must equal p={dims.p}, got {history} + {ahead}")
    q = dims.q
    x_idx = np.arange(history * q)
    y_idx = np.arange((dims.p - 1) * q, dims.p * q)
    return PredictionTask(x_idx=x_idx, y_idx=y_idx, dims=dims)


def build_task_partial(dims: StDims, group1, t1: int, t2: int, target_frame: int | None = None) -> PredictionTask:
    """Partial-data task: two feature groups observed with different recency.

    Group-1 features are observed in frames 0..p-t1-1 and predicted at
    ``target_frame`` (default: the last frame); the complementary features are
    observed in frames 0..p-t2-1. ``t2 == 0`` means observed at all times.
    Indices already observed are removed from the target set.
    """
    p, q = dims.p, dims.q
    group1 = sorted(set(int(g) for g in group1))
    if not group1:
        raise UsageError("group1 must be non-empty")
    if any(g < 0 or g >= q for g in group1):
        raise UsageError(f"group1 features outside [0, {q - 1}]")
    if len(group1) == q:
        raise UsageError("group1 must be a proper subset of the features")
    if not (1 <= t1 <= p):
        raise UsageError(f"t1 must be in [1, {p}], got {t1}")
    if not (0 <= t2 <= p):
        raise UsageError(f"t2 must be in [0, {p}], got {t2}")
    if t1 == t2:
        raise UsageError("t1 and t2 must differ")
    target = p - 1 if target_frame is None else int(target_frame)
    if not (0 <= target < p):
        raise UsageError(f"target_frame must be in [0, {p - 1}], got {target}")
    if target <= p - t1 - 1:
        raise UsageError("target frame's group-1 features are already observed (target within history)")

    group2 = [g for g in range(q) if g not in group1]
    x = set()
    for f in range(p - t1):
        x.update(f * q + g for g in group1)
    for f in range(p - t2):
        x.update(f * q + g for g in group2)
    y = [target * q + g for g in group1 if (target * q + g) not in x]
    if not x or not y:
        raise UsageError("partial task construction produced an empty x or y set")
    return PredictionTask(x_idx=np.array(sorted(x)), y_idx=np.array(sorted(y)), dims=dims)


def fit_predictor(sigma, mu, task: PredictionTask, jitter: float = 1e-10) -> LinearPredictor:
    """Conditional-mean predictor from an assembled covariance.

    Solves A Sigma_x = Sigma_yx through a Cholesky factorization of the
    jittered Sigma_x block; never forms an explicit inverse.
    """
    sigma = np.asarray(sigma, dtype=float)
    d = task.dims.d
    if sigma.shape != (d, d):
        raise UsageError(f"sigma is {sigma.shape}, expected {(d, d)}")
    mu = np.zeros(d) if mu is None else np.asarray(mu, dtype=float)
    if mu.shape != (d,):
        raise UsageError(f"mu length {mu.shape} does not match dimension {d}")
    ix, iy = task.x_idx, task.y_idx
    sx = sigma[np.ix_(ix, ix)].copy()
    sx[np.diag_indices_from(sx)] += jitter * np.trace(sx) / ix.size
    try:
        factor = cho_factor(sx, lower=True)
    except np.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(sx)[0])
        raise ConditioningError(
            f"Sigma_x is not positive definite after jitter (min eigenvalue {min_eig:.3e})",
            min_eigenvalue=min_eig,
        ) from None
    sxy = sigma[np.ix_(ix, iy)]
    coeffs = cho_solve(factor, sxy).T
    cond_cov = sigma[np.ix_(iy, iy)] - coeffs @ sxy
    cond_cov = (cond_cov + cond_cov.T) / 2.0
    return LinearPredictor(coeffs=coeffs, mu_x=mu[ix], mu_y=mu[iy], cond_cov=cond_cov)


def predict(pred: LinearPredictor, x) -> np.ndarray:
    """Evaluate the predictor; ``x`` may be a vector or an (n, |x|) batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != pred.mu_x.size:
        raise UsageError(f"x has length {x.shape[-1]}, predictor expects {pred.mu_x.size}")
    return (x - pred.mu_x) @ pred.coeffs.T + pred.mu_y


def zeroth_order_residuals(series: FrameSeries, ahead: int) -> FrameSeries:
    """Errors of the K-frame-ahead linear extrapolator from two adjacent frames.

    Residual at time t is ``f_t - (f_{t-K} + K (f_{t-K} - f_{t-K-1}))``; the
    output is K+1 frames shorter and vanishes identically on affine-in-time
    series.
    """
    if ahead < 1:
        raise UsageError(f"ahead must be >= 1, got {ahead}")
    f = series.frames
    if len(series) < ahead + 2:
        raise DataError(f"series length {len(series)} too short for ahead={ahead} (need {ahead + 2})")
    base = f[1 : len(series) - ahead]
    prev = f[: len(series) - ahead - 1]
    forecast = base + ahead * (base - prev)
    return FrameSeries(f[ahead + 1 :] - forecast, frame_rate=series.frame_rate)


def reconstruct_from_residual(series: FrameSeries, ahead: int, predicted_residual, t: int) -> np.ndarray:
    """Zeroth-order forecast of frame ``t`` plus a predicted residual.

    With the true residual this returns frame t exactly.
    """
    if ahead < 1:
        raise UsageError(f"ahead must be >= 1, got {ahead}")
    if t - ahead - 1 < 0:
        raise DataError(f"frames {t - ahead} and {t - ahead - 1} not available for t={t}")
    f = series.frames
    base = f[t - ahead]
    prev = f[t - ahead - 1]
    return base + ahead * (base - prev) + np.asarray(predicted_residual, dtype=float)
