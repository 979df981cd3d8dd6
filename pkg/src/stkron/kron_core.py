"""Kronecker algebra primitives shared by the estimation, prediction and bound modules.

Conventions used throughout the package:

* vectorization is column-major (``order='F'``),
* variables are stacked time-major: variable ``d = frame*q + feature`` (0-based),
  so block (i, j) of a ``pq x pq`` covariance is the ``q x q`` cross-covariance of
  frames i and j, and ``np.kron(T, S)`` puts T on time and S on space.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError

__all__ = [
    "StDims",
    "DontCareMask",
    "KronFactorPair",
    "rearrange",
    "unrearrange",
    "dontcare_mask",
    "masked_rank_r_fit",
    "kron_sum_assemble",
    "psd_project",
    "gaussian_sample",
    "commutation_and_rearrangement_perms",
    "normalize_factor_pair",
]


@dataclass(frozen=True)
class StDims:
    """Space-time shape: ``p`` frames per window, ``q`` features per frame."""

    p: int
    q: int

    def __post_init__(self):
        if int(self.p) < 1 or int(self.q) < 1:
            raise UsageError(f"dims must be positive integers, got p={self.p}, q={self.q}")

    @property
    def d(self) -> int:
        """Total dimension p*q of a stacked window."""
        return self.p * self.q


@dataclass(frozen=True)
class DontCareMask:
    """Cells of the rearranged matrix excluded from the least-squares objective.

    The excluded cell set is the Cartesian product ``rows x cols`` (0-based
    indices into the p^2 x q^2 rearranged matrix); for the mask produced by
    :func:`dontcare_mask` these cells map exactly onto the diagonal of the
    original ``pq x pq`` matrix.
    """

    rows: frozenset
    cols: frozenset
    shape: tuple

    def matrix(self) -> np.ndarray:
        """Boolean p^2 x q^2 array, True where a cell is excluded."""
        m = np.zeros(self.shape, dtype=bool)
        if self.rows and self.cols:
            m[np.ix_(sorted(self.rows), sorted(self.cols))] = True
        return m


@dataclass(frozen=True)
class KronFactorPair:
    """One term T_i (x) S_i of a Kronecker sum.

    ``spatial`` carries unit Frobenius norm with its largest-magnitude entry
    positive; the overall scale and sign are folded into ``temporal``.
    """

    temporal: np.ndarray
    spatial: np.ndarray


def _check_square(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise UsageError(f"{name} must be a square matrix, got shape {m.shape}")
    return m


def rearrange(sigma: np.ndarray, dims: StDims) -> np.ndarray:
    """Map a pq x pq matrix to the p^2 x q^2 form whose rank is the separation rank.

    Row ``j*p + i`` / column ``l*q + k`` (0-based, column-major pairs) holds
    ``sigma[i*q + k, j*q + l]``, so that ``rearrange(kron(T, S)) ==
    outer(vec(T), vec(S))`` with column-major vec.
    """
    p, q = dims.p, dims.q
    sigma = _check_square(sigma, "sigma")
    if sigma.shape[0] != dims.d:
        raise UsageError(f"sigma is {sigma.shape[0]}x{sigma.shape[0]}, expected {dims.d}x{dims.d}")
    return sigma.reshape(p, q, p, q).transpose(2, 0, 3, 1).reshape(p * p, q * q)


def unrearrange(b: np.ndarray, dims: StDims) -> np.ndarray:
    """Exact inverse of :func:`rearrange`."""
    p, q = dims.p, dims.q
    b = np.asarray(b, dtype=float)
    if b.shape != (p * p, q * q):
        raise UsageError(f"rearranged matrix is {b.shape}, expected {(p * p, q * q)}")
    return b.reshape(p, p, q, q).transpose(1, 3, 0, 2).reshape(dims.d, dims.d)


def dontcare_mask(dims: StDims) -> DontCareMask:
    """Mask whose excluded cells are exactly the diagonal of the original matrix.

    Diagonal entry (i*q + k) of the covariance lands at row ``i*(p+1)``,
    column ``k*(q+1)`` of the rearranged matrix; the p*q excluded cells are
    the product of those row and column sets.
    """
    p, q = dims.p, dims.q
    rows = frozenset(i * (p + 1) for i in range(p))
    cols = frozenset(k * (q + 1) for k in range(q))
    return DontCareMask(rows=rows, cols=cols, shape=(p * p, q * q))


def _masked_objective(b, weight, t, s):
    resid = (b - t @ s.T)[weight]
    return float(resid @ resid)


def masked_rank_r_fit(b, mask, r, tol=1e-8, max_iter=5000):
    """Rank-r factorization of ``b`` ignoring masked cells.

    Alternating exact least-squares updates over the rows of ``t`` and ``s``,
    initialized from the unweighted truncated SVD of ``b``. Each half-sweep is
    an exact minimization, so the recorded objective trace is non-increasing.

    Parameters
    ----------
    b : (m, n) array
    mask : DontCareMask or None
        Cells excluded from the objective; None means no cells are excluded.
    r : int
        Target rank, at most min(m, n).
    tol : float
        Relative objective-change stopping threshold.
    max_iter : int
        Cap on alternating sweeps.

    Returns
    -------
    t : (m, r) array
    s : (n, r) array
    objective_trace : 1-d array, objective after init and after each sweep.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 2:
        raise UsageError(f"b must be 2-d, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise DataError("non-finite entries in rearranged matrix")
    m, n = b.shape
    if not (1 <= r <= min(m, n)):
        raise UsageError(f"rank r={r} outside [1, {min(m, n)}]")

    weight = np.ones((m, n), dtype=bool) if mask is None else ~mask.matrix()
    if weight.shape != b.shape:
        raise UsageError(f"mask shape {weight.shape} does not match b shape {b.shape}")

    u, sv, vt = np.linalg.svd(b, full_matrices=False)
    t = u[:, :r] * sv[:r]
    s = vt[:r].T.copy()

    trace = [_masked_objective(b, weight, t, s)]
    scale = float(np.sum(b[weight] ** 2))
    for _ in range(max_iter):
        t = _ls_rows(b, weight, s)
        s = _ls_rows(b.T, weight.T, t)
        obj = _masked_objective(b, weight, t, s)
        trace.append(obj)
        prev = trace[-2]
        if obj <= 1e-28 * max(scale, 1.0) or prev - obj <= tol * max(prev, 1e-300):
            break
    return t, s, np.asarray(trace)


def _ls_rows(b, weight, s):
    """Exact LS solve of t for fixed s, row by row (batched on fully observed rows)."""
    m = b.shape[0]
    r = s.shape[1]
    t = np.empty((m, r))
    full = weight.all(axis=1)
    if full.any():
        t[full] = np.linalg.lstsq(s, b[full].T, rcond=None)[0].T
    for i in np.nonzero(~full)[0]:
        w = weight[i]
        t[i] = np.linalg.lstsq(s[w], b[i, w], rcond=None)[0]
    return t


def kron_sum_assemble(factors, diag_load=None) -> np.ndarray:
    """Dense sum_i kron(T_i, S_i), plus an optional diagonal term."""
    if not factors:
        raise UsageError("at least one factor pair required")
    p = factors[0].temporal.shape[0]
    q = factors[0].spatial.shape[0]
    out = np.zeros((p * q, p * q))
    for f in factors:
        if f.temporal.shape != (p, p) or f.spatial.shape != (q, q):
            raise UsageError("inconsistent factor dimensions")
        out += np.kron(f.temporal, f.spatial)
    if diag_load is not None:
        diag_load = np.asarray(diag_load, dtype=float)
        if diag_load.shape != (p * q,):
            raise UsageError(f"diag_load length {diag_load.shape} does not match dimension {p * q}")
        out[np.diag_indices_from(out)] += diag_load
    return (out + out.T) / 2.0


def psd_project(m: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Nearest (Frobenius) matrix with eigenvalues clamped to at least ``floor``."""
    m = _check_square(m, "matrix")
    scale = np.linalg.norm(m)
    if scale > 0 and np.linalg.norm(m - m.T) > 1e-10 * scale:
        raise DataError("matrix is not symmetric (relative asymmetry above 1e-10)")
    sym = (m + m.T) / 2.0
    w, v = np.linalg.eigh(sym)
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    return (out + out.T) / 2.0


def gaussian_sample(sigma, mean, n, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. samples from N(mean, sigma), deterministic in ``seed``.

    Accepts semidefinite ``sigma`` via an eigenvalue factorization.
    """
    sigma = _check_square(sigma, "sigma")
    d = sigma.shape[0]
    mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    if mean.shape != (d,):
        raise UsageError(f"mean length {mean.shape} does not match dimension {d}")
    w, v = np.linalg.eigh((sigma + sigma.T) / 2.0)
    if w.size and w[0] < -1e-8 * max(abs(w[-1]), 1.0):
        raise DataError(f"sigma is indefinite (min eigenvalue {w[0]:.3e})")
    root = v * np.sqrt(np.maximum(w, 0.0))
    rng = np.random.default_rng(seed)
    return rng.standard_normal((int(n), d)) @ root.T + mean


def commutation_and_rearrangement_perms(dims: StDims):
    """Index maps realizing the rearrangement and commutation permutations.

    Returns ``(perm_r, perm_k)`` such that, for column-major vecs,

    * ``vec(kron(T, S)) == (vec(S) kron vec(T))[perm_r]`` for all p x p T and
      q x q S, and
    * ``vec(M)[perm_k] == vec(M.T)`` for any pq x pq M (an involution).
    """
    p, q, d = dims.p, dims.q, dims.d
    v = np.arange(d * d)
    col, row = divmod(v, d)
    i0, k0 = divmod(row, q)
    j0, l0 = divmod(col, q)
    perm_r = (l0 * q + k0) * (p * p) + (j0 * p + i0)
    perm_k = row * d + col
    return perm_r, perm_k


def normalize_factor_pair(temporal, spatial, asym_warn=1e-6) -> KronFactorPair:
    """Symmetrize and normalize one factor pair to the canonical representation.

    The spatial factor gets unit Frobenius norm with positive largest-magnitude
    entry; scale and sign are folded into the temporal factor.
    """
    temporal = _check_square(temporal, "temporal")
    spatial = _check_square(spatial, "spatial")
    for name, mat in (("temporal", temporal), ("spatial", spatial)):
        scale = np.linalg.norm(mat)
        if scale > 0 and np.linalg.norm(mat - mat.T) > asym_warn * scale:
            warnings.warn(f"{name} factor asymmetry exceeds {asym_warn:g} relative; symmetrizing", stacklevel=2)
    temporal = (temporal + temporal.T) / 2.0
    spatial = (spatial + spatial.T) / 2.0
    nrm = np.linalg.norm(spatial)
    if nrm > 0:
        sign = 1.0 if spatial.flat[np.argmax(np.abs(spatial))] >= 0 else -1.0
        spatial = spatial * (sign / nrm)
        temporal = temporal * (sign * nrm)
    return KronFactorPair(temporal=temporal, spatial=spatial)
