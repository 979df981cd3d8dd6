"""Acceptance gate: exact-recovery, bound-consistency, and Monte Carlo ordering checks.

Each test prints a single PASS/FAIL line summarizing its criterion so the
suite output doubles as an acceptance report.
"""
import json
import time
from pathlib import Path

import numpy as np

from stkron import (
    StDims,
    build_task_forward,
    commutation_and_rearrangement_perms,
    crb_predictor_coeffs,
    crb_unstructured,
    dontcare_mask,
    estimate_kron_dl,
    estimate_kron_ls,
    fisher_crb_sigma,
    fit_predictor,
    masked_rank_r_fit,
    predicted_rmse_curve,
    predictor_jacobian,
)
from stkron.cov_est import SampleCovariance
from stkron.harness import run_partial_sweep, run_prediction_sweep, run_rank_sweep
from stkron.serialize import experiment_config_from_dict

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
WORKERS = 4


def report(name, ok, detail):
    print(f"\n[acceptance] {name}: {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, f"{name}: {detail}"


def random_sym_pd(size, rng):
    a = rng.standard_normal((size, size + 2))
    return a @ a.T / (size + 2) + 0.1 * np.eye(size)


def make_sc(matrix, dims):
    return SampleCovariance(matrix=matrix, mean=np.zeros(dims.d), n_samples=1, dims=dims)


def load_config(name, **overrides):
    obj = json.loads((CONFIG_DIR / f"{name}.json").read_text())
    obj.update(overrides)
    return obj, experiment_config_from_dict(obj, base_dir=CONFIG_DIR)


def test_exact_kronecker_recovery():
    rng = np.random.default_rng(100)
    t0 = time.time()
    worst = 0.0
    cases = [(p, q) for p in (2, 3, 4) for q in (2, 3, 4, 5)]
    for i in range(50):
        p, q = cases[i % len(cases)]
        dims = StDims(p, q)
        sigma = np.kron(random_sym_pd(p, rng), random_sym_pd(q, rng))
        rebuilt = estimate_kron_ls(make_sc(sigma, dims), 1).assemble()
        worst = max(worst, np.linalg.norm(rebuilt - sigma) / np.linalg.norm(sigma))
    elapsed = time.time() - t0
    report(
        "exact single-term recovery",
        worst < 1e-10 and elapsed < 10,
        f"worst relative error {worst:.3e} over 50 instances in {elapsed:.2f}s",
    )


def test_diagonally_loaded_recovery():
    rng = np.random.default_rng(101)
    dims = StDims(3, 4)
    worst_m, worst_d = 0.0, 0.0
    for i in range(20):
        t = random_sym_pd(3, rng)
        if i % 2 == 0:
            # correlation-domain fit: unit-diagonal temporal factor keeps the
            # variance rescaling within the Kronecker family
            t = t / np.sqrt(np.outer(np.diag(t), np.diag(t)))
        s = random_sym_pd(4, rng)
        u = rng.uniform(0.1, 1.0, 4)
        load = np.tile(u, 3)  # identical per-feature noise floor in every frame
        sigma = np.kron(t, s) + np.diag(load)
        model = estimate_kron_dl(make_sc(sigma, dims), 1, use_correlation=(i % 2 == 0))
        worst_m = max(worst_m, np.linalg.norm(model.assemble() - sigma) / np.linalg.norm(sigma))
        got = model.diag_load if model.scale is None else model.diag_load * model.scale**2
        worst_d = max(worst_d, np.abs(got - load).max() / np.abs(load).max())
    report(
        "diagonally loaded recovery",
        worst_m < 1e-6 and worst_d < 1e-6,
        f"worst relative error: matrix {worst_m:.3e}, diagonal load {worst_d:.3e} over 20 instances",
    )


def test_masked_als_monotonicity():
    rng = np.random.default_rng(102)
    violations = 0
    for i in range(100):
        p, q = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        dims = StDims(p, q)
        b = rng.standard_normal((p * p, q * q))
        _, _, trace = masked_rank_r_fit(b, dontcare_mask(dims), 1, max_iter=60)
        if np.any(np.diff(trace) > 1e-12) or trace[-1] > trace[0] + 1e-12:
            violations += 1
    report(
        "masked ALS objective monotonicity",
        violations == 0,
        f"{violations} violations in 100 random masked fits",
    )


def test_predictor_jacobian_finite_differences():
    rng = np.random.default_rng(103)
    step = 1e-6
    worst = 0.0
    shapes = [(2, 2), (2, 3), (3, 2), (2, 4), (3, 4), (4, 3), (2, 6), (3, 3)]
    for i in range(20):
        p, q = shapes[i % len(shapes)]
        dims = StDims(p, q)
        sigma = random_sym_pd(dims.d, rng)
        task = build_task_forward(dims, ahead=1, history=p - 1)
        jac = predictor_jacobian(sigma, task)
        ix, iy = task.x_idx, task.y_idx

        def coeffs(m):
            sx = m[np.ix_(ix, ix)]
            return np.linalg.solve(sx.T, m[np.ix_(iy, ix)].T).T

        fd = np.zeros_like(jac)
        for col in range(dims.d**2):
            r, c = col % dims.d, col // dims.d
            hi, lo = sigma.copy(), sigma.copy()
            hi[r, c] += step
            lo[r, c] -= step
            fd[:, col] = (coeffs(hi) - coeffs(lo)).ravel(order="F") / (2 * step)
        worst = max(worst, np.abs(jac - fd).max())
    report(
        "predictor jacobian vs central differences",
        worst < 1e-6,
        f"max abs deviation {worst:.3e} over 20 covariances",
    )


def test_crb_closed_forms():
    v = 2.0
    scalar_printed = fisher_crb_sigma(np.array([[v]]), np.array([[1.0]]), convention="as_printed")[0, 0]
    scalar_real = fisher_crb_sigma(np.array([[v]]), np.array([[1.0]]), convention="real_gaussian")[0, 0]
    scalar_ok = abs(scalar_printed - v**2) < 1e-10 and abs(scalar_real - 2 * v**2) < 1e-10

    rng = np.random.default_rng(104)
    sigma = random_sym_pd(4, rng)
    free = crb_unstructured(sigma, convention="as_printed")
    free_err = np.abs(free - np.kron(sigma.T, sigma)).max()

    t = random_sym_pd(3, rng)
    s = random_sym_pd(4, rng)
    base = fisher_crb_sigma(t, s)
    scale_err = 0.0
    for c in (0.1, 10.0):
        scale_err = max(scale_err, np.abs(fisher_crb_sigma(c * t, s / c) - base).max())
    scale_err /= np.abs(base).max()

    ranks_ok = True
    for p, q in [(2, 3), (3, 3), (3, 4)]:
        dims = StDims(p, q)
        tt = random_sym_pd(p, rng)
        ss = random_sym_pd(q, rng)
        perm_r, _ = commutation_and_rearrangement_perms(dims)
        gamma0 = np.hstack(
            [
                np.kron(ss.ravel(order="F")[:, None], np.eye(p * p)),
                np.kron(np.eye(q * q), tt.ravel(order="F")[:, None]),
            ]
        )
        d_jac = np.eye(dims.d**2)[perm_r, :] @ gamma0
        inv = np.linalg.inv(np.kron(tt, ss))
        fim = d_jac.T @ np.kron(inv, inv) @ d_jac
        if np.linalg.matrix_rank(fim, tol=1e-8 * np.abs(fim).max()) != p * p + q * q - 1:
            ranks_ok = False

    ok = scalar_ok and free_err < 1e-12 and scale_err < 1e-10 and ranks_ok
    report(
        "CRB closed forms",
        ok,
        f"scalar ok={scalar_ok}, unstructured err {free_err:.2e}, "
        f"scale-invariance err {scale_err:.2e}, factor-FIM corank-1 ok={ranks_ok}",
    )


def test_crb_predicted_rmse_matches_monte_carlo():
    obj, _ = load_config(
        "forward_sweep",
        estimators=[{"name": "scm"}, {"name": "kron_ls", "r": 1}],
        n_grid=[20, 50, 100, 10000],
        trials=500,
    )
    config = experiment_config_from_dict(obj, base_dir=CONFIG_DIR)
    t0 = time.time()
    res = run_prediction_sweep(config, workers=WORKERS)
    elapsed = time.time() - t0

    # bound-implied curve for the same truth and task
    from stkron.harness import exp_decay_matrix, random_spd

    t = exp_decay_matrix(3, 0.7)
    s = random_spd(4, 42, 0.6)
    sigma = np.kron(t, s)
    task = config.task
    f_sigma = fisher_crb_sigma(t, s)
    f_a = crb_predictor_coeffs(f_sigma, predictor_jacobian(sigma, task))
    pred = fit_predictor(sigma, None, task)
    sigma_x = sigma[np.ix_(task.x_idx, task.x_idx)]
    bound_at_1e4 = predicted_rmse_curve(f_a, sigma_x, pred.cond_cov, [10000])[0][1]

    kron = res.curves["kron_ls(r=1)"]
    scm = res.curves["scm"]
    empirical = kron[-1].mean_rmse
    rel_gap = abs(empirical - bound_at_1e4) / bound_at_1e4
    below = all(k.mean_rmse < c.mean_rmse for k, c in zip(kron, scm))
    report(
        "structured predictor matches its bound",
        rel_gap < 0.10 and below and elapsed < 300,
        f"empirical {empirical:.4f} vs bound {bound_at_1e4:.4f} (gap {100 * rel_gap:.1f}%), "
        f"structured below SCM at all n={list(config.n_grid)}: {below}, {elapsed:.1f}s",
    )


def test_crossover_with_model_mismatch():
    obj, config = load_config("crossover")
    res = run_prediction_sweep(config, workers=WORKERS)
    kron = res.curves["kron_ls(r=1)"]
    ridge = res.curves["scm_ridge(lam=0.1)"]
    lo_gap = ridge[0].mean_rmse - kron[0].mean_rmse
    lo_need = 2 * (ridge[0].stderr + kron[0].stderr)
    hi_gap = kron[-1].mean_rmse - ridge[-1].mean_rmse
    hi_need = 2 * (ridge[-1].stderr + kron[-1].stderr)
    report(
        "small-n/large-n crossover under 10% mismatch",
        lo_gap > lo_need and hi_gap > hi_need,
        f"n={kron[0].n}: structured wins by {lo_gap:.4f} (> {lo_need:.4f}); "
        f"n={kron[-1].n}: ridge wins by {hi_gap:.4f} (> {hi_need:.4f})",
    )


def test_rank_two_needs_diagonal_correction():
    obj, config = load_config("rank_sweep")
    res = run_rank_sweep(config, obj["r_list"], workers=WORKERS)
    d1 = res.curves["kron_dl(r=1,lam=0,corr)"][0]
    d2 = res.curves["kron_dl(r=2,lam=0,corr)"][0]
    l1 = res.curves["kron_ls(r=1)"][0]
    l2 = res.curves["kron_ls(r=2)"][0]
    tie = d2.mean_rmse <= d1.mean_rmse + d1.stderr
    unstable = l2.mean_rmse > l1.mean_rmse
    report(
        "second term helps only with diagonal correction",
        tie and unstable,
        f"corrected: r=2 {d2.mean_rmse:.4f} vs r=1 {d1.mean_rmse:.4f}+{d1.stderr:.4f} (ok={tie}); "
        f"uncorrected: r=2 {l2.mean_rmse:.4f} > r=1 {l1.mean_rmse:.4f} (ok={unstable})",
    )


def test_partial_observation_ordering():
    obj, config = load_config("partial")
    res = run_partial_sweep(config, workers=WORKERS)
    kron = res.curves["kron_dl(r=1,lam=0.05,corr)"][0]
    ridge = res.curves["scm_ridge(lam=0.1)"][0]
    gap = ridge.mean_rmse - kron.mean_rmse
    need = 2 * (ridge.stderr + kron.stderr)
    zvals = [pt.mean_rmse for pt in res.curves["zeroth_order"]]
    flat = (max(zvals) - min(zvals)) / np.mean(zvals) < 0.02
    report(
        "partial-data ordering",
        gap > need and flat,
        f"n={kron.n}: corrected wins by {gap:.4f} (> {need:.4f}); "
        f"no-learning baseline spread {max(zvals) - min(zvals):.4f} over n={[pt.n for pt in res.curves['zeroth_order']]} (flat={flat})",
    )


def test_scm_second_order_asymptotics():
    rng = np.random.default_rng(110)
    sigma = np.array([[2.0, 0.6, 0.2], [0.6, 1.5, 0.4], [0.2, 0.4, 1.0]])
    n, trials = 50, 10_000
    w, v = np.linalg.eigh(sigma)
    root = v * np.sqrt(w)
    x = rng.standard_normal((trials, n, 3)) @ root.T
    centered = x - x.mean(axis=1, keepdims=True)
    scms = np.einsum("tni,tnj->tij", centered, centered) / n
    vecs = scms.reshape(trials, 9)  # row-major == column-major here by symmetry
    emp = n * np.cov(vecs.T, bias=True)
    _, perm_k = commutation_and_rearrangement_perms(StDims(3, 1))
    k_mat = np.eye(9)[perm_k, :]
    target = (np.eye(9) + k_mat) @ np.kron(sigma, sigma)
    rel = np.linalg.norm(emp - target) / np.linalg.norm(target)
    report(
        "SCM second-order asymptotics",
        rel < 0.10,
        f"relative Frobenius error {100 * rel:.2f}% over {trials} trials at n={n}",
    )


def test_cli_worker_determinism(tmp_path):
    from stkron.cli import main

    obj, _ = load_config("crossover", trials=24, n_grid=[15, 40], eval_samples=60)
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(obj))
    out1, out8 = tmp_path / "w1", tmp_path / "w8"
    code1 = main(["experiment", str(cfg_path), "--workers", "1", "--out", str(out1), "--quiet"])
    code8 = main(["experiment", str(cfg_path), "--workers", "8", "--out", str(out8), "--quiet"])
    run1, run8 = next(out1.glob("run-*")), next(out8.glob("run-*"))
    csvs = sorted(p.name for p in run1.glob("curve_*.csv"))
    identical = bool(csvs) and all(
        (run1 / name).read_bytes() == (run8 / name).read_bytes() for name in csvs
    )
    report(
        "worker-count determinism",
        code1 == 0 and code8 == 0 and identical,
        f"{len(csvs)} curve files byte-identical between --workers 1 and --workers 8: {identical}",
    )
