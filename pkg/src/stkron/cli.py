"""Command-line front end tying the modules into reproducible runs.

Exit codes: 0 success, 2 usage/validation, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cov_est import (
    FrameSeries,
    SampleCovariance,
    estimate_kron_dl,
    estimate_kron_ls,
    kron_spectrum,
    sample_covariance,
    sliding_window_samples,
)
from .crb import (
    CONVENTIONS,
    asymptotic_error_cov,
    crb_predictor_coeffs,
    crb_unstructured,
    fisher_crb_sigma,
    predicted_rmse_curve,
    predictor_jacobian,
)
from .errors import DataError, NumericalError, StkronError, UsageError
from .harness import run_partial_sweep, run_prediction_sweep, run_rank_sweep
from .kron_core import StDims, gaussian_sample
from .predictor import fit_predictor, predict, reconstruct_from_residual, zeroth_order_residuals
from .serialize import (
    canonical_hash,
    experiment_config_from_dict,
    load_frame_series,
    matrix_from_wrapper,
    matrix_to_wrapper,
    model_from_dict,
    model_to_dict,
    read_matrix_csv,
    result_to_dict,
    task_from_dict,
    task_to_dict,
    truth_from_dict,
    write_csv_rows,
    write_manifest,
    write_matrix_csv,
)


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _load_covariance(path, dims=None):
    """Covariance from a JSON wrapper file ({"dims", "matrix"} or bare wrapper)."""
    obj = _read_json(path)
    if "matrix" in obj:
        m = matrix_from_wrapper(obj["matrix"])
        if dims is None and "dims" in obj:
            dims = StDims(p=int(obj["dims"]["p"]), q=int(obj["dims"]["q"]))
    else:
        m = matrix_from_wrapper(obj)
    if dims is None:
        raise UsageError(f"{path} carries no dims; pass --dims P Q")
    if m.shape != (dims.d, dims.d):
        raise DataError(f"covariance in {path} is {m.shape[0]}x{m.shape[1]}, dims expect {dims.d}x{dims.d}")
    return m, dims


def _slug(label):
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_")


def _prepare_out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _seed(args):
    return 0 if args.seed is None else args.seed


def cmd_decompose(args):
    out = _prepare_out(args)
    in_path = Path(args.input)
    if not in_path.exists():
        raise UsageError(f"file not found: {in_path}")
    if in_path.suffix == ".csv":
        if args.dims is None:
            raise UsageError("--dims P Q is required for series input")
        dims = StDims(p=args.dims[0], q=args.dims[1])
        series = load_frame_series(in_path, delimiter=args.delimiter, stride=args.stride)
        if series.q != dims.q:
            raise DataError(f"series width {series.q} does not match expected q={dims.q}")
        sc = sample_covariance(sliding_window_samples(series, dims), dims)
    else:
        dims = None if args.dims is None else StDims(p=args.dims[0], q=args.dims[1])
        matrix, dims = _load_covariance(in_path, dims)
        sc = SampleCovariance(matrix=matrix, mean=np.zeros(dims.d), n_samples=1, dims=dims)

    if args.diag_load:
        model = estimate_kron_dl(sc, args.rank, use_correlation=args.correlation, extra_diag=args.extra_diag)
    else:
        model = estimate_kron_ls(sc, args.rank)
    k = min(args.spectrum_k, dims.p**2, dims.q**2)
    spec = kron_spectrum(sc, k)

    model_path = out / "model.json"
    model_path.write_text(json.dumps(model_to_dict(model), indent=2) + "\n")
    spectrum_path = out / "spectrum.csv"
    write_csv_rows(
        spectrum_path,
        ["term", "rms_energy"],
        [(i + 1, float(e)) for i, e in enumerate(spec["rms_energies"])],
    )
    report_path = out / "report.json"
    report_path.write_text(
        json.dumps({"pct_rmse_first": spec["pct_rmse_first"], "rank": args.rank, "dims": {"p": dims.p, "q": dims.q}}, indent=2)
        + "\n"
    )
    outputs = [model_path, spectrum_path, report_path]
    if args.plot:
        fig_path = out / "spectrum.png"
        from .plots import plot_spectrum

        plot_spectrum(spec["rms_energies"], spec["pct_rmse_first"], fig_path)
        outputs.append(fig_path)
    cfg = {
        "input": str(in_path),
        "rank": args.rank,
        "diag_load": bool(args.diag_load),
        "correlation": bool(args.correlation),
        "extra_diag": args.extra_diag,
        "dims": {"p": dims.p, "q": dims.q},
    }
    write_manifest(out, "decompose", canonical_hash(cfg), [in_path], outputs, _seed(args))
    _say(args, f"decompose: pct_rmse_first={spec['pct_rmse_first']:.4f} -> {out}")
    return 0


def cmd_predict(args):
    out = _prepare_out(args)
    if args.model:
        model = model_from_dict(_read_json(args.model))
        sigma, dims = model.assemble(), model.dims
        cov_input = Path(args.model)
    else:
        sigma, dims = _load_covariance(args.cov)
        cov_input = Path(args.cov)
    task = task_from_dict(_read_json(args.task))
    if task.dims != dims:
        raise DataError(
            f"task dims (p={task.dims.p}, q={task.dims.q}) do not match model dims (p={dims.p}, q={dims.q})"
        )
    series = load_frame_series(args.series, delimiter=args.delimiter)
    if series.q != dims.q:
        raise DataError(f"series width {series.q} does not match model q={dims.q}")

    ahead = args.ahead
    res = zeroth_order_residuals(series, ahead)
    pred = fit_predictor(sigma, None, task, jitter=args.jitter)
    p, q = dims.p, dims.q

    rows = []
    sq_sum, count = 0.0, 0
    per_frame = []
    for e in range(p - 1, len(res)):
        window = res.frames[e - p + 1 : e + 1].ravel()
        resid_hat = predict(pred, window[task.x_idx])
        frame_sq, frame_n = 0.0, 0
        for pos, rhat in zip(task.y_idx, resid_hat):
            f_y, g = divmod(int(pos), q)
            t_orig = (e - p + 1 + f_y) + ahead + 1
            recon = reconstruct_from_residual(series, ahead, np.zeros(q), t_orig)[g] + rhat
            actual = series.frames[t_orig][g]
            rows.append((t_orig + 1, g + 1, float(recon), float(actual)))
            err = (recon - actual) ** 2
            sq_sum += err
            frame_sq += err
            count += 1
            frame_n += 1
        per_frame.append(float(np.sqrt(frame_sq / frame_n)))

    if count == 0:
        raise DataError("series too short to form any prediction window")
    pred_path = out / "predictions.csv"
    write_csv_rows(pred_path, ["frame", "feature", "predicted", "actual"], rows)
    summary = {
        "rmse": float(np.sqrt(sq_sum / count)),
        "n_predictions": count,
        "ahead": ahead,
        "per_frame_rmse": per_frame,
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    cfg = {"cov": str(cov_input), "task": str(args.task), "series": str(args.series), "ahead": ahead}
    write_manifest(out, "predict", canonical_hash(cfg), [cov_input, args.task, args.series], [pred_path, summary_path], _seed(args))
    _say(args, f"predict: rmse={summary['rmse']:.6g} over {count} values -> {out}")
    return 0


def cmd_crb(args):
    out = _prepare_out(args)
    truth = _read_json(args.truth)
    task = task_from_dict(_read_json(args.task))
    dims = task.dims
    kind = truth.get("kind", "kronecker")
    if kind == "kronecker":
        temporal = matrix_from_wrapper(truth["temporal"])
        spatial = matrix_from_wrapper(truth["spatial"])
        if temporal.shape[0] != dims.p or spatial.shape[0] != dims.q:
            raise DataError(
                f"truth factors are {temporal.shape[0]}x{temporal.shape[0]} and "
                f"{spatial.shape[0]}x{spatial.shape[0]}, task dims expect p={dims.p}, q={dims.q}"
            )
        sigma = np.kron(temporal, spatial)
        f_sigma = fisher_crb_sigma(temporal, spatial, convention=args.convention, allow_large=args.allow_large)
    elif kind == "unstructured":
        sigma = matrix_from_wrapper(truth.get("sigma", truth.get("matrix")))
        if sigma.shape != (dims.d, dims.d):
            raise DataError(f"truth covariance is {sigma.shape}, task dims expect {(dims.d, dims.d)}")
        f_sigma = crb_unstructured(sigma, convention=args.convention, allow_large=args.allow_large)
    else:
        raise DataError(f"unknown truth kind {kind!r} (expected 'kronecker' or 'unstructured')")

    jac = predictor_jacobian(sigma, task)
    f_a = crb_predictor_coeffs(f_sigma, jac)
    pred = fit_predictor(sigma, None, task)
    sigma_x = sigma[np.ix_(task.x_idx, task.x_idx)]
    err_cov = asymptotic_error_cov(f_a, sigma_x, 1)
    curve = predicted_rmse_curve(f_a, sigma_x, pred.cond_cov, args.n_grid)

    report = {
        "convention": args.convention,
        "dims": {"p": dims.p, "q": dims.q},
        "f_sigma": matrix_to_wrapper(f_sigma),
        "f_a": matrix_to_wrapper(f_a),
        "err_cov_per_sample": matrix_to_wrapper(err_cov),
        "omniscient_rmse": float(np.sqrt(np.trace(pred.cond_cov) / task.y_idx.size)),
        "rmse_curve": [[n, v] for n, v in curve],
    }
    report_path = out / "crb_report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    curve_path = out / "rmse_curve.csv"
    write_csv_rows(curve_path, ["n", "rmse"], [(n, v) for n, v in curve])
    outputs = [report_path, curve_path]
    if args.plot:
        from .plots import plot_crb_curve

        fig_path = out / "rmse_curve.png"
        plot_crb_curve(curve, fig_path, floor=report["omniscient_rmse"])
        outputs.append(fig_path)
    cfg = {"truth": truth, "task": str(args.task), "n_grid": list(args.n_grid), "convention": args.convention}
    write_manifest(out, "crb", canonical_hash(cfg), [args.truth, args.task], outputs, _seed(args))
    _say(args, f"crb: omniscient floor {report['omniscient_rmse']:.6g} -> {out}")
    return 0


def cmd_experiment(args):
    cfg_obj = _read_json(args.config)
    cfg_hash = canonical_hash(cfg_obj)
    base_out = Path(args.out)
    out = base_out / f"run-{cfg_hash[:12]}"
    out.mkdir(parents=True, exist_ok=True)

    config = experiment_config_from_dict(cfg_obj, base_dir=Path(args.config).parent, seed=args.seed)
    mode = cfg_obj.get("mode", "sweep")
    t0 = time.time()
    if mode == "sweep":
        result = run_prediction_sweep(config, workers=args.workers)
    elif mode == "rank":
        result = run_rank_sweep(
            config,
            cfg_obj.get("r_list", [1, 2]),
            dl_lam=float(cfg_obj.get("dl_lam", 0.0)),
            use_correlation=bool(cfg_obj.get("use_correlation", True)),
            workers=args.workers,
        )
    elif mode == "partial":
        result = run_partial_sweep(config, workers=args.workers)
    else:
        raise UsageError(f"unknown experiment mode {mode!r} (expected sweep, rank or partial)")

    result.metadata["config_hash"] = cfg_hash
    result.metadata["elapsed_seconds"] = round(time.time() - t0, 3)
    report_path = out / "result.json"
    report_path.write_text(json.dumps(result_to_dict(result), indent=2) + "\n")
    outputs = [report_path]
    for label, points in result.curves.items():
        curve_path = out / f"curve_{_slug(label)}.csv"
        write_csv_rows(
            curve_path,
            ["n", "mean_rmse", "stderr", "failure_rate"],
            [(pt.n, pt.mean_rmse, pt.stderr, pt.failure_rate) for pt in points],
        )
        outputs.append(curve_path)
    if args.plot:
        from .plots import plot_rmse_curves

        fig_path = out / "curves.png"
        plot_rmse_curves(result.curves, fig_path, title=mode)
        outputs.append(fig_path)
    write_manifest(out, "experiment", cfg_hash, [args.config], outputs, config.seed)
    _say(args, f"experiment[{mode}]: {config.trials} trials -> {out}")
    return 0


def cmd_sample(args):
    out = _prepare_out(args)
    sigma, dims = _load_covariance(args.cov)
    mean = None
    if args.mean is not None:
        mean = np.asarray(read_matrix_csv(args.mean)).ravel()
    samples = gaussian_sample(sigma, mean, args.n, _seed(args))
    samples_path = out / "samples.csv"
    write_matrix_csv(samples_path, samples)
    cfg = {"cov": str(args.cov), "n": args.n, "seed": _seed(args)}
    write_manifest(out, "sample", canonical_hash(cfg), [args.cov], [samples_path], _seed(args))
    _say(args, f"sample: {args.n} draws of dimension {dims.d} -> {out}")
    return 0


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(prog="stkron", description="Kronecker-structured space-time covariance toolkit")
    parser.add_argument("--version", action="version", version=f"stkron {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0; overrides config seeds)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", parents=[common], help="fit a Kronecker-sum covariance model")
    p.add_argument("input", help="series .csv or covariance .json")
    p.add_argument("--dims", type=int, nargs=2, metavar=("P", "Q"))
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--diag-load", action="store_true", help="fit the diagonally loaded model")
    p.add_argument("--correlation", action="store_true", help="fit in correlation space")
    p.add_argument("--extra-diag", type=float, default=0.0, help="extra diagonal regularization")
    p.add_argument("--spectrum-k", type=int, default=10)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--stride", type=int, default=1, help="temporal downsampling stride for series input")
    p.add_argument("--plot", action="store_true", help="render a spectrum figure")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("predict", parents=[common], help="predict a series through a fitted model")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="model .json from decompose")
    group.add_argument("--cov", help="covariance .json")
    p.add_argument("--task", required=True, help="task .json")
    p.add_argument("--series", required=True, help="series .csv")
    p.add_argument("--ahead", type=int, required=True, help="zeroth-order extrapolation horizon")
    p.add_argument("--jitter", type=float, default=1e-10)
    p.add_argument("--delimiter", default=",")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("crb", parents=[common], help="Cramer-Rao bound report for a truth/task pair")
    p.add_argument("--truth", required=True, help="truth .json (kronecker or unstructured)")
    p.add_argument("--task", required=True, help="task .json")
    p.add_argument("--n-grid", type=_int_list, required=True, help="comma-separated sample sizes")
    p.add_argument("--convention", choices=CONVENTIONS, default="real_gaussian")
    p.add_argument("--allow-large", action="store_true", help="lift the pq size gate on dense bound matrices")
    p.add_argument("--plot", action="store_true", help="render the RMSE curve figure")
    p.set_defaults(func=cmd_crb)

    p = sub.add_parser("experiment", parents=[common], help="run a Monte Carlo experiment config")
    p.add_argument("config", help="experiment config .json")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plot", action="store_true", help="render the RMSE-vs-n figure")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sample", parents=[common], help="draw Gaussian samples from a covariance")
    p.add_argument("--cov", required=True, help="covariance .json")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mean", help="optional mean vector .csv")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
