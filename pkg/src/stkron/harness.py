"""Monte Carlo experiment engine: estimator comparisons versus sample size.

Trials are independent work units, each seeded from ``(base_seed,
trial_index)``; aggregation is order-independent, so results are identical for
any worker count.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import toeplitz

from .cov_est import (
    FrameSeries,
    estimate_kron_dl,
    estimate_kron_ls,
    regularized_scm,
    sample_covariance,
    sliding_window_samples,
)
from .errors import ConditioningError, DataError, UsageError
from .kron_core import StDims, psd_project
from .predictor import (
    LinearPredictor,
    PredictionTask,
    build_task_forward,
    fit_predictor,
    predict,
    reconstruct_from_residual,
    zeroth_order_residuals,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "CurvePoint",
    "estimator_label",
    "run_prediction_sweep",
    "run_rank_sweep",
    "run_partial_sweep",
    "series_pipeline",
    "exp_decay_matrix",
    "random_spd",
    "psd_perturbation",
]

ESTIMATOR_NAMES = ("scm", "scm_ridge", "kron_ls", "kron_dl", "zeroth_order")


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs of one Monte Carlo sweep against a fixed truth covariance."""

    dims: StDims
    truth: np.ndarray
    task: PredictionTask
    estimators: tuple
    n_grid: tuple
    trials: int
    eval_samples: int = 200
    seed: int = 0
    psd_fix: bool = True
    jitter: float = 1e-10
    resample_sliding: bool = False

    def __post_init__(self):
        truth = np.asarray(self.truth, dtype=float)
        if truth.shape != (self.dims.d, self.dims.d):
            raise UsageError(f"truth is {truth.shape}, expected {(self.dims.d, self.dims.d)}")
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "estimators", tuple(dict(e) for e in self.estimators))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if not self.n_grid:
            raise UsageError("n_grid must be non-empty")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise UsageError(f"n_grid must be strictly increasing, got {self.n_grid}")
        if self.trials < 1:
            raise UsageError(f"trials must be >= 1, got {self.trials}")
        if self.eval_samples < 1:
            raise UsageError(f"eval_samples must be >= 1, got {self.eval_samples}")
        for spec in self.estimators:
            estimator_label(spec)


@dataclass(frozen=True)
class CurvePoint:
    n: int
    mean_rmse: float
    stderr: float
    failure_rate: float


@dataclass(frozen=True)
class ExperimentResult:
    """Per-estimator RMSE curves plus the omniscient floor and run metadata."""

    curves: dict
    metadata: dict


def estimator_label(spec: dict) -> str:
    """Stable human-readable label for an estimator spec dict."""
    name = spec.get("name")
    if name not in ESTIMATOR_NAMES:
        raise UsageError(f"unknown estimator {name!r}; valid names: {', '.join(ESTIMATOR_NAMES)}")
    if name == "scm" or name == "zeroth_order":
        return name
    if name == "scm_ridge":
        return f"scm_ridge(lam={spec.get('lam', 0.1):g})"
    r = spec.get("r", 1)
    if name == "kron_ls":
        return f"kron_ls(r={r})"
    lam = spec.get("lam", 0.0)
    corr = spec.get("use_correlation", True)
    return f"kron_dl(r={r},lam={lam:g}{',corr' if corr else ''})"


def _fit_estimator(spec, samples, dims, psd_fix):
    """Covariance estimate for one spec; None means the no-learning baseline."""
    name = spec["name"]
    if name == "zeroth_order":
        return None
    sc = sample_covariance(samples, dims)
    if name == "scm":
        return sc.matrix
    if name == "scm_ridge":
        return regularized_scm(sc, spec.get("lam", 0.1))
    if name == "kron_ls":
        est = estimate_kron_ls(sc, spec.get("r", 1)).assemble()
    else:
        est = estimate_kron_dl(
            sc,
            spec.get("r", 1),
            use_correlation=spec.get("use_correlation", True),
            extra_diag=spec.get("lam", 0.0),
        ).assemble()
    return psd_project(est) if psd_fix else est


def _cov_root(sigma):
    w, v = np.linalg.eigh((sigma + sigma.T) / 2.0)
    if w.size and w[0] < -1e-8 * max(abs(w[-1]), 1.0):
        raise DataError(f"truth covariance is indefinite (min eigenvalue {w[0]:.3e})")
    return v * np.sqrt(np.maximum(w, 0.0))


def _eval_rmse(coeffs, x, y):
    resid = y - x @ coeffs.T
    return float(np.sqrt(np.mean(resid**2)))


def sample_stationary_series(sigma, dims, length, rng) -> FrameSeries:
    """Zero-mean Gaussian series whose p-frame windows have covariance ``sigma``.

    The first window is drawn jointly; subsequent frames are drawn from the
    conditional distribution given the previous p-1 frames.
    """
    p, q = dims.p, dims.q
    if length < p:
        raise UsageError(f"length {length} shorter than window {p}")
    root = _cov_root(sigma)
    frames = np.empty((length, q))
    frames[:p] = (root @ rng.standard_normal(dims.d)).reshape(p, q)
    if length > p and p > 1:
        task = build_task_forward(dims, ahead=1, history=p - 1)
        pred = fit_predictor(sigma, None, task)
        cond_root = _cov_root(pred.cond_cov)
        for t in range(p, length):
            x = frames[t - p + 1 : t].ravel()
            frames[t] = pred.coeffs @ x + cond_root @ rng.standard_normal(q)
    elif length > p:
        # p == 1: frames are i.i.d.
        frames[p:] = rng.standard_normal((length - p, q)) @ root.T
    return FrameSeries(frames)


def _draw_training(rng, config, root, n):
    if config.resample_sliding:
        series = sample_stationary_series(config.truth, config.dims, n + config.dims.p - 1, rng)
        return sliding_window_samples(series, config.dims)
    return rng.standard_normal((n, config.dims.d)) @ root.T


def _run_trial(payload):
    config, root, omni_coeffs, t = payload
    rng = np.random.default_rng((config.seed, t))
    ix, iy = config.task.x_idx, config.task.y_idx
    out = {}
    for n in config.n_grid:
        train = _draw_training(rng, config, root, n)
        held = rng.standard_normal((config.eval_samples, config.dims.d)) @ root.T
        x_eval, y_eval = held[:, ix], held[:, iy]
        baseline = float(np.sqrt(np.mean(y_eval**2)))
        out[("omniscient", n)] = (_eval_rmse(omni_coeffs, x_eval, y_eval), False)
        for spec in config.estimators:
            label = estimator_label(spec)
            if spec["name"] == "zeroth_order":
                out[(label, n)] = (baseline, False)
                continue
            try:
                sigma_hat = _fit_estimator(spec, train, config.dims, config.psd_fix)
                pred = fit_predictor(sigma_hat, None, config.task, jitter=config.jitter)
                out[(label, n)] = (_eval_rmse(pred.coeffs, x_eval, y_eval), False)
            except (ConditioningError, DataError, np.linalg.LinAlgError):
                out[(label, n)] = (baseline, True)
    return out


def run_prediction_sweep(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Fit/predict/evaluate over all (trial, n, estimator) combinations.

    Failed trials (conditioning or data errors after jitter) are scored at the
    zeroth-order baseline RMSE and surfaced through the failure-rate column.
    """
    root = _cov_root(config.truth)
    omni = fit_predictor(config.truth, None, config.task, jitter=config.jitter)
    payloads = [(config, root, omni.coeffs, t) for t in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial, payloads, chunksize=max(1, config.trials // (4 * workers))))
    else:
        per_trial = [_run_trial(p) for p in payloads]

    labels = ["omniscient"] + [estimator_label(s) for s in config.estimators]
    curves = {}
    for label in labels:
        points = []
        for n in config.n_grid:
            vals = np.array([trial[(label, n)][0] for trial in per_trial])
            fails = np.array([trial[(label, n)][1] for trial in per_trial])
            stderr = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            points.append(
                CurvePoint(n=n, mean_rmse=float(vals.mean()), stderr=stderr, failure_rate=float(fails.mean()))
            )
        curves[label] = tuple(points)
    metadata = {
        "seed": config.seed,
        "trials": config.trials,
        "eval_samples": config.eval_samples,
        "n_grid": list(config.n_grid),
        "psd_fix": config.psd_fix,
        "resample_sliding": config.resample_sliding,
        "estimators": [estimator_label(s) for s in config.estimators],
    }
    return ExperimentResult(curves=curves, metadata=metadata)


def run_rank_sweep(config: ExperimentConfig, r_list, dl_lam: float = 0.0,
                   use_correlation: bool = True, workers: int = 1) -> ExperimentResult:
    """Separation-rank sweep: kron_ls(r) and kron_dl(r) per rank, plus baselines."""
    r_list = [int(r) for r in r_list]
    if not r_list:
        raise UsageError("r_list must be non-empty")
    estimators = [{"name": "scm"}]
    for r in r_list:
        estimators.append({"name": "kron_ls", "r": r})
        estimators.append({"name": "kron_dl", "r": r, "lam": dl_lam, "use_correlation": use_correlation})
    swept = replace(config, estimators=tuple(estimators))
    result = run_prediction_sweep(swept, workers=workers)
    result.metadata["r_list"] = r_list
    return result


def run_partial_sweep(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Partial-observation sweep; always includes the zeroth-order baseline."""
    specs = list(config.estimators)
    if not any(s["name"] == "zeroth_order" for s in specs):
        specs.append({"name": "zeroth_order"})
    return run_prediction_sweep(replace(config, estimators=tuple(specs)), workers=workers)


def series_pipeline(
    series: FrameSeries,
    dims: StDims,
    estimators,
    ahead: int,
    n_train: int,
    eval_frames: int,
    psd_fix: bool = True,
    jitter: float = 1e-10,
) -> ExperimentResult:
    """Walk-forward evaluation on a real series via zeroth-order residuals.

    At each evaluation frame the estimators are learned on the ``n_train``
    sliding-window residual samples immediately prior (causally: residual
    windows whose observed part ends at least ``ahead`` frames back), the
    residual of the target frame is predicted, the frame is reconstructed, and
    squared errors accumulate over ``eval_frames`` consecutive frames.
    """
    p, q = dims.p, dims.q
    if dims.q != series.q:
        raise DataError(f"series has {series.q} features, dims expect {dims.q}")
    if ahead >= p:
        raise UsageError(f"ahead={ahead} must be smaller than the window p={p}")
    res = zeroth_order_residuals(series, ahead)
    task = build_task_forward(dims, ahead=ahead, history=p - ahead)
    # residual index e needs training windows inside res[0 : e - ahead + 1]
    start = n_train + p - 1 + ahead - 1
    stop = start + eval_frames
    if stop > len(res):
        raise DataError(
            f"series too short: need {stop + ahead + 1} frames for n_train={n_train}, "
            f"eval_frames={eval_frames}, window p={p}, ahead={ahead}"
        )

    labels = [estimator_label(s) for s in estimators]
    sq_err = {lab: [] for lab in labels}
    fails = {lab: 0 for lab in labels}
    for e in range(start, stop):
        avail = res.frames[: e - ahead + 1]
        train = sliding_window_samples(FrameSeries(avail[-(n_train + p - 1):]), dims)
        window = res.frames[e - p + 1 : e + 1].ravel()
        x = window[task.x_idx]
        t_orig = e + ahead + 1  # map residual index back to the original series
        actual = series.frames[t_orig]
        for spec, lab in zip(estimators, labels):
            if spec["name"] == "zeroth_order":
                resid_hat = np.zeros(q)
            else:
                try:
                    sigma_hat = _fit_estimator(spec, train, dims, psd_fix)
                    pred = fit_predictor(sigma_hat, None, task, jitter=jitter)
                    resid_hat = predict(pred, x)
                except (ConditioningError, DataError, np.linalg.LinAlgError):
                    resid_hat = np.zeros(q)
                    fails[lab] += 1
            recon = reconstruct_from_residual(series, ahead, resid_hat, t_orig)
            sq_err[lab].append(np.mean((recon - actual) ** 2))

    curves = {}
    for lab in labels:
        errs = np.asarray(sq_err[lab])
        per_frame = np.sqrt(errs)
        stderr = float(per_frame.std(ddof=1) / np.sqrt(per_frame.size)) if per_frame.size > 1 else 0.0
        point = CurvePoint(
            n=n_train,
            mean_rmse=float(np.sqrt(errs.mean())),
            stderr=stderr,
            failure_rate=fails[lab] / eval_frames,
        )
        curves[lab] = (point,)
    metadata = {"mode": "series", "ahead": ahead, "n_train": n_train, "eval_frames": eval_frames}
    return ExperimentResult(curves=curves, metadata=metadata)


def exp_decay_matrix(size: int, rho: float) -> np.ndarray:
    """Correlation-like matrix with entries rho^|i-j| (PD for |rho| < 1)."""
    return toeplitz(rho ** np.arange(size))


def random_spd(size: int, seed, spread: float = 1.0) -> np.ndarray:
    """Random symmetric positive definite matrix with controllable eigenvalue spread."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((size, size))
    qmat, _ = np.linalg.qr(a)
    eig = np.exp(spread * rng.standard_normal(size))
    return (qmat * eig) @ qmat.T


def psd_perturbation(base: np.ndarray, frac: float, seed) -> np.ndarray:
    """PSD perturbation with Frobenius norm frac * ||base||_F (keeps PD-ness)."""
    rng = np.random.default_rng(seed)
    d = base.shape[0]
    g = rng.standard_normal((d, d))
    e = g @ g.T
    return e * (frac * np.linalg.norm(base) / np.linalg.norm(e))
