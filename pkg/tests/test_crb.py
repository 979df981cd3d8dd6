"""Tests for the Fisher-information bounds and the predictor-coefficient transform."""
import numpy as np
import pytest

from stkron import (
    StDims,
    UsageError,
    asymptotic_error_cov,
    build_task_forward,
    commutation_and_rearrangement_perms,
    crb_predictor_coeffs,
    crb_unstructured,
    fisher_crb_sigma,
    fit_predictor,
    predicted_rmse_curve,
    predictor_jacobian,
)
from stkron.harness import exp_decay_matrix, random_spd


def test_scalar_closed_forms():
    # For Sigma = [[v]] the bound on the variance estimate is v^2 without the
    # real-Gaussian 1/2 Fisher factor and 2 v^2 with it.
    v = 2.0
    out = fisher_crb_sigma(np.array([[v]]), np.array([[1.0]]), convention="as_printed")
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(v**2, rel=1e-12)
    out2 = fisher_crb_sigma(np.array([[v]]), np.array([[1.0]]), convention="real_gaussian")
    assert out2[0, 0] == pytest.approx(2 * v**2, rel=1e-12)


def test_unstructured_closed_form():
    sigma = random_spd(4, 3, 0.5)
    out = crb_unstructured(sigma, convention="as_printed")
    assert np.allclose(out, np.kron(sigma.T, sigma), atol=1e-12)
    out2 = crb_unstructured(sigma, convention="real_gaussian")
    assert np.allclose(out2, 2.0 * np.kron(sigma.T, sigma), atol=1e-12)


def test_kron_bound_scale_invariance():
    t = exp_decay_matrix(3, 0.6)
    s = random_spd(4, 1, 0.4)
    base = fisher_crb_sigma(t, s)
    for c in (0.1, 10.0):
        scaled = fisher_crb_sigma(c * t, s / c)
        assert np.allclose(scaled, base, atol=1e-10 * np.abs(base).max())


def test_kron_fim_middle_term_rank():
    # The factor parameterization is redundant by exactly the one scale
    # direction, so the (p^2+q^2)-dim information matrix has corank 1.
    for p, q, seed in [(2, 3, 0), (3, 3, 1), (3, 4, 2)]:
        dims = StDims(p, q)
        t = random_spd(p, seed, 0.5)
        s = random_spd(q, seed + 10, 0.5)
        perm_r, _ = commutation_and_rearrangement_perms(dims)
        gamma0 = np.hstack(
            [
                np.kron(s.ravel(order="F")[:, None], np.eye(p * p)),
                np.kron(np.eye(q * q), t.ravel(order="F")[:, None]),
            ]
        )
        d_jac = np.eye(dims.d**2)[:, perm_r].T @ gamma0
        sigma_inv = np.linalg.inv(np.kron(t, s))
        fim = d_jac.T @ np.kron(sigma_inv, sigma_inv) @ d_jac
        assert np.linalg.matrix_rank(fim, tol=1e-8 * np.abs(fim).max()) == p * p + q * q - 1


def test_kron_bound_below_unstructured():
    t = exp_decay_matrix(3, 0.6)
    s = random_spd(4, 1, 0.4)
    structured = fisher_crb_sigma(t, s)
    free = crb_unstructured(np.kron(t, s))
    gap = np.linalg.eigvalsh(free - structured)
    assert gap[0] > -1e-8 * np.abs(free).max()


def test_size_gate():
    t = np.eye(9)
    s = np.eye(9)
    with pytest.raises(UsageError, match="allow_large"):
        fisher_crb_sigma(t, s)
    with pytest.raises(UsageError):
        crb_unstructured(np.eye(81))
    out = crb_unstructured(np.eye(81), allow_large=True)
    assert out.shape == (81 * 81, 81 * 81)


def test_structure_basis_validation():
    t = exp_decay_matrix(2, 0.5)
    s = np.eye(2)
    # a basis that cannot express the temporal factor
    bad = np.zeros((4, 1))
    bad[0, 0] = 1.0
    with pytest.raises(UsageError):
        fisher_crb_sigma(t, s, struct_t=bad)
    with pytest.raises(UsageError):
        fisher_crb_sigma(t, s, convention="nope")


def coeffs_of(sigma, task):
    """A(Sigma) = Sigma_yx Sigma_x^{-1}, defined for any (even asymmetric) input."""
    sx = sigma[np.ix_(task.x_idx, task.x_idx)]
    syx = sigma[np.ix_(task.y_idx, task.x_idx)]
    return np.linalg.solve(sx.T, syx.T).T


def finite_diff_jacobian(sigma, task, step=1e-6):
    d = sigma.shape[0]
    ny, nx = task.y_idx.size, task.x_idx.size
    jac = np.zeros((ny * nx, d * d))
    for col in range(d * d):
        r, c = col % d, col // d
        hi = sigma.copy()
        hi[r, c] += step
        lo = sigma.copy()
        lo[r, c] -= step
        jac[:, col] = (coeffs_of(hi, task) - coeffs_of(lo, task)).ravel(order="F") / (2 * step)
    return jac


def test_predictor_jacobian_matches_finite_differences():
    rng = np.random.default_rng(4)
    for p, q in [(2, 2), (3, 2), (2, 3)]:
        dims = StDims(p, q)
        a = rng.standard_normal((dims.d, dims.d + 2))
        sigma = a @ a.T / (dims.d + 2) + 0.5 * np.eye(dims.d)
        task = build_task_forward(dims, ahead=1, history=p - 1)
        jac = predictor_jacobian(sigma, task)
        fd = finite_diff_jacobian(sigma, task)
        assert np.abs(jac - fd).max() < 1e-6


def test_jacobian_zero_outside_relevant_blocks():
    dims = StDims(3, 2)
    sigma = np.kron(exp_decay_matrix(3, 0.5), np.eye(2)) + 0.2 * np.eye(6)
    task = build_task_forward(dims, ahead=1, history=2)
    jac = predictor_jacobian(sigma, task)
    d = dims.d
    relevant = np.zeros((d, d), dtype=bool)
    relevant[np.ix_(task.x_idx, task.x_idx)] = True
    relevant[np.ix_(task.y_idx, task.x_idx)] = True
    dead = ~relevant.ravel(order="F")
    assert np.abs(jac[:, dead]).max() == 0.0


def test_asymptotic_error_cov_matches_loop_oracle():
    rng = np.random.default_rng(6)
    nx, ny, n = 3, 2, 17
    f_a = rng.standard_normal((nx * ny, nx * ny))
    f_a = f_a @ f_a.T
    sigma_x = random_spd(nx, 0, 0.5)
    out = asymptotic_error_cov(f_a, sigma_x, n)
    expected = np.zeros((ny, ny))
    c4 = (f_a / n).reshape(nx, ny, nx, ny)
    for i in range(ny):
        for j in range(ny):
            for k in range(nx):
                for l in range(nx):
                    expected[i, j] += c4[k, i, l, j] * sigma_x[k, l]
    expected = (expected + expected.T) / 2
    assert np.allclose(out, expected, atol=1e-12)
    with pytest.raises(UsageError):
        asymptotic_error_cov(f_a, sigma_x, 0)


def test_predicted_rmse_curve_decreases_to_floor():
    t = exp_decay_matrix(3, 0.6)
    s = random_spd(4, 1, 0.4)
    sigma = np.kron(t, s)
    dims = StDims(3, 4)
    task = build_task_forward(dims, ahead=1, history=2)
    f_sigma = fisher_crb_sigma(t, s)
    jac = predictor_jacobian(sigma, task)
    f_a = crb_predictor_coeffs(f_sigma, jac)
    pred = fit_predictor(sigma, None, task)
    sigma_x = sigma[np.ix_(task.x_idx, task.x_idx)]
    curve = predicted_rmse_curve(f_a, sigma_x, pred.cond_cov, [10, 100, 1000, 10**6])
    vals = [v for _, v in curve]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    floor = np.sqrt(np.trace(pred.cond_cov) / task.y_idx.size)
    assert vals[-1] == pytest.approx(floor, rel=1e-3)
    assert all(v >= floor for v in vals)


def test_crb_predictor_coeffs_shape_check():
    with pytest.raises(UsageError):
        crb_predictor_coeffs(np.eye(4), np.zeros((2, 5)))
