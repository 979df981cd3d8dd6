"""Sample covariance construction and Kronecker-sum model fitting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .kron_core import (
    StDims,
    KronFactorPair,
    dontcare_mask,
    kron_sum_assemble,
    masked_rank_r_fit,
    normalize_factor_pair,
    rearrange,
    unrearrange,
)

__all__ = [
    "FrameSeries",
    "SampleCovariance",
    "KronSumModel",
    "sliding_window_samples",
    "sample_covariance",
    "to_correlation",
    "estimate_kron_ls",
    "estimate_kron_dl",
    "regularized_scm",
    "kron_spectrum",
]


@dataclass(frozen=True)
class FrameSeries:
    """An ordered sequence of q-dimensional feature vectors.

    ``frames`` has shape (L, q); ``frame_rate`` (Hz) is metadata only.
    """

    frames: np.ndarray
    frame_rate: float | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 2:
            raise DataError(f"frames must be 2-d (L, q), got shape {frames.shape}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def q(self) -> int:
        return self.frames.shape[1]

    def downsampled(self, stride: int) -> "FrameSeries":
        """Every ``stride``-th frame (temporal downsampling)."""
        if stride < 1:
            raise UsageError(f"stride must be >= 1, got {stride}")
        rate = None if self.frame_rate is None else self.frame_rate / stride
        return FrameSeries(self.frames[::stride], frame_rate=rate)


@dataclass(frozen=True)
class SampleCovariance:
    """Sample covariance of stacked windows, with its mean and sample count."""

    matrix: np.ndarray
    mean: np.ndarray
    n_samples: int
    dims: StDims


@dataclass(frozen=True)
class KronSumModel:
    """Fitted (optionally diagonally loaded) sum-of-Kronecker covariance model.

    When ``fit_domain == "correlation"`` the Kronecker sum lives in correlation
    space and ``scale`` holds the per-variable standard deviations used to map
    the assembled matrix back to covariance space.
    """

    factors: tuple
    dims: StDims
    diag_load: np.ndarray | None = None
    fit_domain: str = "covariance"
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.fit_domain not in ("covariance", "correlation"):
            raise UsageError(f"unknown fit_domain {self.fit_domain!r}")
        if (self.fit_domain == "correlation") != (self.scale is not None):
            raise UsageError("scale must be present exactly when fit_domain is 'correlation'")

    @property
    def r(self) -> int:
        return len(self.factors)

    def assemble(self) -> np.ndarray:
        """Dense pq x pq covariance represented by the model."""
        out = kron_sum_assemble(list(self.factors), self.diag_load)
        if self.scale is not None:
            out = out * np.outer(self.scale, self.scale)
        return out


def sliding_window_samples(series: FrameSeries, dims: StDims) -> np.ndarray:
    """Overlapping multiframe samples, the window advancing one frame at a time.

    Row m is the time-major concatenation of frames m..m+p-1. The rows overlap
    and are therefore not independent samples.
    """
    if series.q != dims.q:
        raise DataError(f"series has {series.q} features per frame, dims expect {dims.q}")
    L, p = len(series), dims.p
    if L < p:
        raise DataError(f"series length {L} shorter than window length {p}")
    n = L - p + 1
    idx = np.arange(p)[None, :] + np.arange(n)[:, None]
    return series.frames[idx].reshape(n, dims.d)


def sample_covariance(samples: np.ndarray, dims: StDims) -> SampleCovariance:
    """Mean-removed sample covariance with 1/n normalization (exactly symmetric)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != dims.d:
        raise UsageError(f"samples must be (n, {dims.d}), got {samples.shape}")
    n = samples.shape[0]
    if n < 1:
        raise UsageError("at least one sample required")
    mean = samples.mean(axis=0)
    centered = samples - mean
    matrix = centered.T @ centered / n
    matrix = (matrix + matrix.T) / 2.0
    return SampleCovariance(matrix=matrix, mean=mean, n_samples=n, dims=dims)


def to_correlation(sc: SampleCovariance):
    """Correlation matrix and the standard-deviation vector that undoes it."""
    diag = np.diag(sc.matrix).copy()
    bad = np.nonzero(diag <= np.finfo(float).eps)[0]
    if bad.size:
        raise DataError(f"degenerate variable(s) with non-positive variance at index {bad.tolist()}")
    scale = np.sqrt(diag)
    corr = sc.matrix / np.outer(scale, scale)
    np.fill_diagonal(corr, 1.0)
    return corr, scale


def _factors_from_columns(t, s, dims, order=None):
    cols = range(t.shape[1]) if order is None else order
    factors = []
    for i in cols:
        factors.append(
            normalize_factor_pair(
                t[:, i].reshape(dims.p, dims.p, order="F"),
                s[:, i].reshape(dims.q, dims.q, order="F"),
            )
        )
    return tuple(factors)


def _check_rank(r, dims):
    bound = min(dims.p**2, dims.q**2)
    if not (1 <= r <= bound):
        raise UsageError(f"separation rank r={r} outside [1, {bound}] for dims (p={dims.p}, q={dims.q})")


def estimate_kron_ls(sc: SampleCovariance, r: int) -> KronSumModel:
    """Frobenius-optimal rank-r Kronecker sum fit (SVD of the rearranged matrix)."""
    _check_rank(r, sc.dims)
    b = rearrange(sc.matrix, sc.dims)
    u, sv, vt = np.linalg.svd(b, full_matrices=False)
    t = u[:, :r] * sv[:r]
    s = vt[:r].T
    return KronSumModel(factors=_factors_from_columns(t, s, sc.dims), dims=sc.dims)


def estimate_kron_dl(
    sc: SampleCovariance,
    r: int,
    use_correlation: bool = True,
    extra_diag: float = 0.0,
    tol: float = 1e-8,
    max_iter: int = 5000,
) -> KronSumModel:
    """Diagonally loaded Kronecker sum fit.

    The working matrix (correlation by default, which typically predicts
    better) is rearranged, its diagonal cells are dropped from the objective,
    and a rank-r factorization is fit by alternating least squares. The
    diagonal load absorbs whatever variance the Kronecker part fails to
    explain, clamped at zero to help preserve positive semidefiniteness, plus
    ``extra_diag`` for regularization.
    """
    _check_rank(r, sc.dims)
    if extra_diag < 0:
        raise UsageError(f"extra_diag must be >= 0, got {extra_diag}")
    if use_correlation:
        working, scale = to_correlation(sc)
    else:
        working, scale = sc.matrix, None
    b = rearrange(working, sc.dims)
    mask = dontcare_mask(sc.dims)
    t, s, _ = masked_rank_r_fit(b, mask, r, tol=tol, max_iter=max_iter)
    # order terms by decreasing contribution so factor 1 is the dominant one
    norms = np.linalg.norm(t, axis=0) * np.linalg.norm(s, axis=0)
    factors = _factors_from_columns(t, s, sc.dims, order=np.argsort(-norms))
    reformed = kron_sum_assemble(list(factors))
    diag_load = np.maximum(0.0, np.diag(working) - np.diag(reformed)) + extra_diag
    return KronSumModel(
        factors=factors,
        dims=sc.dims,
        diag_load=diag_load,
        fit_domain="correlation" if use_correlation else "covariance",
        scale=scale,
    )


def regularized_scm(sc: SampleCovariance, lam: float) -> np.ndarray:
    """Ridge-loaded sample covariance: matrix + lam * (tr/pq) * I."""
    if lam < 0:
        raise UsageError(f"lambda must be >= 0, got {lam}")
    out = sc.matrix.copy()
    out[np.diag_indices_from(out)] += lam * np.trace(sc.matrix) / sc.dims.d
    return out


def kron_spectrum(sc: SampleCovariance, k: int):
    """Normalized RMS energies of the leading Kronecker terms.

    ``rms_energies[i]`` is the i-th singular value of the rearranged matrix
    divided by the first; ``pct_rmse_first`` is the relative Frobenius error
    (in percent) of keeping only the first term.
    """
    bound = min(sc.dims.p**2, sc.dims.q**2)
    if not (1 <= k <= bound):
        raise UsageError(f"k={k} outside [1, {bound}]")
    sv = np.linalg.svd(rearrange(sc.matrix, sc.dims), compute_uv=False)
    total = float(np.sum(sv**2))
    if total == 0.0:
        return {"rms_energies": np.zeros(k), "pct_rmse_first": 0.0}
    pct = 100.0 * np.sqrt(np.sum(sv[1:] ** 2) / total)
    return {"rms_energies": sv[:k] / sv[0], "pct_rmse_first": float(pct)}
