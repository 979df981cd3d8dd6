"""Fisher-information / Cramer-Rao bounds for covariance and predictor coefficients.

The bound on vec of the estimated covariance is computed for a single
Kronecker-product model (optionally with linear structure on each factor) and
for the unstructured case; a Jacobian transform carries it to the conditional
predictor coefficients and on to the induced prediction-error covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConditioningError, DataError, UsageError
from .kron_core import StDims, commutation_and_rearrangement_perms
from .predictor import PredictionTask

__all__ = [
    "CrbReport",
    "fisher_crb_sigma",
    "crb_unstructured",
    "predictor_jacobian",
    "crb_predictor_coeffs",
    "asymptotic_error_cov",
    "predicted_rmse_curve",
]

CONVENTIONS = ("as_printed", "real_gaussian")

# Dense bound matrices are (pq)^2 square; refuse silly sizes unless overridden.
DEFAULT_MAX_DIM = 64


@dataclass(frozen=True)
class CrbReport:
    """Bundle of bound matrices for one truth/task pair."""

    f_sigma: np.ndarray
    f_a: np.ndarray | None = None
    err_cov: np.ndarray | None = None
    rmse_curve: tuple | None = None
    convention: str = "real_gaussian"


def _chol_pd(m, name):
    try:
        return cho_factor(np.asarray(m, dtype=float), lower=True)
    except np.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(m)[0])
        raise ConditioningError(
            f"{name} must be positive definite (min eigenvalue {min_eig:.3e})",
            min_eigenvalue=min_eig,
        ) from None


def _inv_pd(m, name):
    factor = _chol_pd(m, name)
    return cho_solve(factor, np.eye(m.shape[0]))


def _check_convention(convention):
    if convention not in CONVENTIONS:
        raise UsageError(f"convention must be one of {CONVENTIONS}, got {convention!r}")


def _check_size(d, allow_large):
    if d > DEFAULT_MAX_DIM and not allow_large:
        raise UsageError(
            f"dimension pq={d} exceeds the {DEFAULT_MAX_DIM} gate for dense (pq)^2 bound matrices; "
            "pass allow_large=True to override"
        )


def _basis_coords(basis, v, name):
    """Coordinates of v in the column space of basis (must lie in it)."""
    if np.linalg.matrix_rank(basis) < basis.shape[1]:
        raise UsageError(f"{name} structure basis is rank deficient")
    theta, *_ = np.linalg.lstsq(basis, v, rcond=None)
    if np.linalg.norm(basis @ theta - v) > 1e-8 * max(np.linalg.norm(v), 1.0):
        raise UsageError(f"vec of the {name} factor does not lie in the span of its structure basis")
    return theta


def fisher_crb_sigma(
    temporal,
    spatial,
    struct_t=None,
    struct_s=None,
    convention: str = "real_gaussian",
    allow_large: bool = False,
) -> np.ndarray:
    """Per-sample bound on Cov[vec of the estimated covariance], Kronecker model.

    The covariance is kron(temporal, spatial) with optional linear structure
    ``vec(T) = struct_t @ theta_t`` (and likewise for the spatial factor). The
    ``as_printed`` convention omits the 1/2 Fisher factor of real Gaussian
    data; ``real_gaussian`` doubles the bound accordingly.
    """
    _check_convention(convention)
    temporal = np.asarray(temporal, dtype=float)
    spatial = np.asarray(spatial, dtype=float)
    p, q = temporal.shape[0], spatial.shape[0]
    dims = StDims(p=p, q=q)
    _check_size(dims.d, allow_large)

    p_t = np.eye(p * p) if struct_t is None else np.asarray(struct_t, dtype=float)
    p_s = np.eye(q * q) if struct_s is None else np.asarray(struct_s, dtype=float)
    theta_t = _basis_coords(p_t, temporal.ravel(order="F"), "temporal")
    theta_s = _basis_coords(p_s, spatial.ravel(order="F"), "spatial")
    m_t, m_s = theta_t.size, theta_s.size

    gamma0 = np.hstack(
        [np.kron(theta_s[:, None], np.eye(m_t)), np.kron(np.eye(m_s), theta_t[:, None])]
    )
    perm_r, _ = commutation_and_rearrangement_perms(dims)
    pmat = np.kron(p_s, p_t)[perm_r, :]
    d_jac = pmat @ gamma0  # (pq)^2 x (m_t + m_s)

    sigma_inv = _inv_pd(np.kron(temporal, spatial), "kron(temporal, spatial)")
    metric = np.kron(sigma_inv, sigma_inv)
    f_theta = d_jac.T @ metric @ d_jac
    f_theta = (f_theta + f_theta.T) / 2.0

    # The scale reparameterization (cT, S/c) is an exact null direction of the
    # Fisher information; deflate it before the pseudoinverse for stability.
    null = np.concatenate([theta_t, -theta_s])
    null = null / np.linalg.norm(null)
    proj = np.eye(null.size) - np.outer(null, null)
    f_theta = proj @ f_theta @ proj

    w, v = np.linalg.eigh(f_theta)
    cutoff = f_theta.shape[0] * np.max(np.abs(w), initial=0.0) * np.finfo(float).eps
    inv_w = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    f_theta_pinv = (v * inv_w) @ v.T

    f_sigma = d_jac @ f_theta_pinv @ d_jac.T
    f_sigma = (f_sigma + f_sigma.T) / 2.0
    if convention == "real_gaussian":
        f_sigma = 2.0 * f_sigma
    return f_sigma


def crb_unstructured(sigma, convention: str = "real_gaussian", allow_large: bool = False) -> np.ndarray:
    """Bound for an arbitrary covariance (the trivial-temporal-factor case)."""
    _check_convention(convention)
    sigma = np.asarray(sigma, dtype=float)
    _check_size(sigma.shape[0], allow_large)
    _chol_pd(sigma, "sigma")
    out = np.kron(sigma.T, sigma)
    if convention == "real_gaussian":
        out = 2.0 * out
    return out


def predictor_jacobian(sigma, task: PredictionTask, jitter: float = 0.0) -> np.ndarray:
    """Derivative of vec(A) with respect to vec(Sigma), on full vec coordinates.

    Rows enumerate coefficient entries A_ij column-major; columns enumerate
    the (pq)^2 entries of vec(Sigma). Each covariance cell is treated as an
    independent coordinate (no symmetry doubling), matching unsymmetrized
    finite-difference perturbations. Cells outside the Sigma_x and Sigma_yx
    blocks have exactly zero derivative.
    """
    sigma = np.asarray(sigma, dtype=float)
    d = task.dims.d
    if sigma.shape != (d, d):
        raise UsageError(f"sigma is {sigma.shape}, expected {(d, d)}")
    ix, iy = task.x_idx, task.y_idx
    nx, ny = ix.size, iy.size
    sx = sigma[np.ix_(ix, ix)].copy()
    if jitter:
        sx[np.diag_indices_from(sx)] += jitter * np.trace(sx) / nx
    sx_inv = _inv_pd(sx, "Sigma_x")
    coeffs = sigma[np.ix_(iy, ix)] @ sx_inv

    jac = np.zeros((ny * nx, d * d))
    rows = np.add.outer(np.arange(nx) * ny, np.arange(ny))  # rows[j, i] = j*ny + i
    for ell in range(nx):
        # Sigma_yx cells (k = i, ell): dA_ij = sx_inv[ell, j]
        cols = ix[ell] * d + iy  # col per i
        jac[rows, cols[None, :]] += sx_inv[ell, :][:, None]
        # Sigma_x cells (k, ell): dA_ij = -sx_inv[ell, j] * A_ik
        for k in range(nx):
            col = ix[ell] * d + ix[k]
            jac[rows, col] += -np.outer(sx_inv[ell, :], coeffs[:, k])
    return jac


def crb_predictor_coeffs(f_sigma, jac) -> np.ndarray:
    """Bound on vec(A): the Jacobian sandwich of the covariance bound."""
    f_sigma = np.asarray(f_sigma, dtype=float)
    jac = np.asarray(jac, dtype=float)
    if jac.shape[1] != f_sigma.shape[0] or f_sigma.shape[0] != f_sigma.shape[1]:
        raise UsageError(f"shape mismatch: jacobian {jac.shape} vs f_sigma {f_sigma.shape}")
    out = jac @ f_sigma @ jac.T
    return (out + out.T) / 2.0


def asymptotic_error_cov(f_a, sigma_x, n) -> np.ndarray:
    """Prediction-error covariance induced by coefficient estimation error.

    Cov[e]_ij = sum_{k,l} (f_a / n)[(i,k),(j,l)] * Sigma_x[k,l], with f_a
    indexed by vec(A) column-major.
    """
    f_a = np.asarray(f_a, dtype=float)
    sigma_x = np.asarray(sigma_x, dtype=float)
    nx = sigma_x.shape[0]
    if sigma_x.shape != (nx, nx) or f_a.shape[0] != f_a.shape[1] or f_a.shape[0] % nx:
        raise UsageError(f"shape mismatch: f_a {f_a.shape} vs sigma_x {sigma_x.shape}")
    ny = f_a.shape[0] // nx
    if n <= 0:
        raise UsageError(f"sample count must be positive, got {n}")
    c4 = (f_a / n).reshape(nx, ny, nx, ny)
    out = np.einsum("kilj,kl->ij", c4, sigma_x)
    return (out + out.T) / 2.0


def predicted_rmse_curve(f_a, sigma_x, cond_cov, n_grid, per_variable: bool = True):
    """Bound-implied prediction RMSE as a function of training sample size.

    Each point is sqrt(tr Cov[e](n) + tr Cov[y|x]); with ``per_variable`` the
    trace sum is divided by |y| so values are comparable to per-variable
    empirical RMSE. The curve decreases monotonically to the omniscient floor.
    """
    cond_cov = np.asarray(cond_cov, dtype=float)
    ny = cond_cov.shape[0]
    floor = float(np.trace(cond_cov))
    curve = []
    for n in n_grid:
        excess = float(np.trace(asymptotic_error_cov(f_a, sigma_x, n)))
        total = excess + floor
        curve.append((int(n), float(np.sqrt(total / ny if per_variable else total))))
    return curve
