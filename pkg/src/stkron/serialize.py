"""File formats: matrix CSV/JSON wrappers, model/task files, configs, manifests.

CSV numbers use the shortest round-trip decimal representation with '.' as the
decimal mark and LF line endings; JSON numbers round-trip exactly through the
default encoder.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .cov_est import FrameSeries, KronSumModel
from .errors import DataError, UsageError
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    exp_decay_matrix,
    psd_perturbation,
    random_spd,
)
from .kron_core import KronFactorPair, StDims, kron_sum_assemble
from .predictor import PredictionTask, build_task_forward, build_task_partial

__all__ = [
    "matrix_to_wrapper",
    "matrix_from_wrapper",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_csv_rows",
    "load_frame_series",
    "model_to_dict",
    "model_from_dict",
    "task_to_dict",
    "task_from_dict",
    "truth_from_dict",
    "experiment_config_from_dict",
    "result_to_dict",
    "canonical_hash",
    "write_manifest",
]


def _fmt(x) -> str:
    return repr(float(x))


def matrix_to_wrapper(m) -> dict:
    """JSON wrapper {"rows", "cols", "data"} with row-major data."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return {"rows": m.shape[0], "cols": m.shape[1], "data": [float(v) for v in m.ravel()]}


def matrix_from_wrapper(obj) -> np.ndarray:
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed matrix wrapper: {exc}") from None
    data = np.asarray(data, dtype=float)
    if data.size != rows * cols:
        raise DataError(f"matrix wrapper claims {rows}x{cols} but holds {data.size} values")
    return data.reshape(rows, cols)


def write_matrix_csv(path, m):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    lines = [",".join(_fmt(v) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_matrix_csv(path, delimiter=","):
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(delimiter)])
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no numeric rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"{path}: inconsistent column counts {sorted(widths)}")
    return np.asarray(rows)


def write_csv_rows(path, header, rows):
    """Delimited output with a header line; numeric cells use round-trip repr."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def load_frame_series(path, delimiter=",", stride=1) -> FrameSeries:
    """One row per frame, q numeric columns; an optional non-numeric header is skipped."""
    text = Path(path).read_text().splitlines()
    start = 0
    if text:
        try:
            [float(v) for v in text[0].split(delimiter)]
        except ValueError:
            start = 1
    rows = []
    for lineno, line in enumerate(text[start:], start=start + 1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(delimiter)])
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no frames found")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"{path}: inconsistent column counts {sorted(widths)}")
    series = FrameSeries(np.asarray(rows))
    return series.downsampled(stride) if stride != 1 else series


def _dims_to_dict(dims: StDims) -> dict:
    return {"p": dims.p, "q": dims.q}


def _dims_from_dict(obj) -> StDims:
    try:
        return StDims(p=int(obj["p"]), q=int(obj["q"]))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed dims: {exc}") from None


def model_to_dict(model: KronSumModel) -> dict:
    return {
        "dims": _dims_to_dict(model.dims),
        "r": model.r,
        "fit_domain": model.fit_domain,
        "factors": [
            {"temporal": matrix_to_wrapper(f.temporal), "spatial": matrix_to_wrapper(f.spatial)}
            for f in model.factors
        ],
        "diag_load": None if model.diag_load is None else [float(v) for v in model.diag_load],
        "scale": None if model.scale is None else [float(v) for v in model.scale],
    }


def model_from_dict(obj) -> KronSumModel:
    dims = _dims_from_dict(obj.get("dims", {}))
    factors = tuple(
        KronFactorPair(
            temporal=matrix_from_wrapper(f["temporal"]),
            spatial=matrix_from_wrapper(f["spatial"]),
        )
        for f in obj.get("factors", [])
    )
    if not factors:
        raise DataError("model file holds no factors")
    diag = obj.get("diag_load")
    scale = obj.get("scale")
    return KronSumModel(
        factors=factors,
        dims=dims,
        diag_load=None if diag is None else np.asarray(diag, dtype=float),
        fit_domain=obj.get("fit_domain", "covariance"),
        scale=None if scale is None else np.asarray(scale, dtype=float),
    )


def task_to_dict(task: PredictionTask) -> dict:
    """Task files carry 1-based indices."""
    return {
        "dims": _dims_to_dict(task.dims),
        "x_idx": [int(i) + 1 for i in task.x_idx],
        "y_idx": [int(i) + 1 for i in task.y_idx],
    }


def task_from_dict(obj) -> PredictionTask:
    dims = _dims_from_dict(obj.get("dims", {}))
    if "forward" in obj:
        f = obj["forward"]
        return build_task_forward(dims, ahead=int(f["ahead"]), history=int(f["history"]))
    if "partial" in obj:
        f = obj["partial"]
        return build_task_partial(
            dims,
            group1=[int(g) - 1 for g in f["group1"]],
            t1=int(f["t1"]),
            t2=int(f["t2"]),
            target_frame=None if f.get("target_frame") is None else int(f["target_frame"]) - 1,
        )
    try:
        x = [int(i) - 1 for i in obj["x_idx"]]
        y = [int(i) - 1 for i in obj["y_idx"]]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed task file: {exc}") from None
    return PredictionTask(x_idx=np.asarray(x), y_idx=np.asarray(y), dims=dims)


def _factor_matrix_from_spec(spec, base_dir=None):
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    if isinstance(spec, dict) and "data" in spec:
        return matrix_from_wrapper(spec)
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "exp_decay":
            return exp_decay_matrix(int(spec["size"]), float(spec["rho"]))
        if kind == "random_spd":
            return random_spd(int(spec["size"]), int(spec["seed"]), spread=float(spec.get("spread", 1.0)))
        raise DataError(f"unknown matrix spec kind {kind!r}")
    raise DataError(f"cannot interpret matrix spec of type {type(spec).__name__}")


def truth_from_dict(spec, dims: StDims, base_dir=None) -> np.ndarray:
    """Assemble a truth covariance from its config spec.

    Kinds: ``matrix`` (inline wrapper or csv/json path) and ``kron_sum``
    (factor pairs built from inline or generator specs, optional uniform or
    per-entry diagonal load, optional PSD non-Kronecker perturbation).
    """
    kind = spec.get("kind")
    if kind == "matrix":
        if "path" in spec:
            path = Path(spec["path"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            if path.suffix == ".json":
                obj = json.loads(path.read_text())
                m = matrix_from_wrapper(obj.get("matrix", obj))
            else:
                m = read_matrix_csv(path)
        else:
            m = matrix_from_wrapper(spec["matrix"])
    elif kind == "kron_sum":
        factors = [
            KronFactorPair(
                temporal=_factor_matrix_from_spec(f["temporal"], base_dir),
                spatial=_factor_matrix_from_spec(f["spatial"], base_dir),
            )
            for f in spec["factors"]
        ]
        diag = spec.get("diag_load")
        if isinstance(diag, (int, float)):
            diag = np.full(dims.d, float(diag))
        elif diag is not None:
            diag = np.asarray(diag, dtype=float)
        m = kron_sum_assemble(factors, diag)
        pert = spec.get("perturb")
        if pert:
            m = m + psd_perturbation(m, float(pert["frac"]), int(pert["seed"]))
    else:
        raise DataError(f"unknown truth kind {kind!r}")
    if m.shape != (dims.d, dims.d):
        raise DataError(f"truth covariance is {m.shape}, dims expect {(dims.d, dims.d)}")
    return m


def experiment_config_from_dict(obj, base_dir=None, seed=None) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed config JSON dict."""
    try:
        dims = _dims_from_dict(obj["dims"])
        truth = truth_from_dict(obj["truth"], dims, base_dir=base_dir)
        task = task_from_dict({"dims": obj["dims"], **obj["task"]})
        estimators = obj["estimators"]
        n_grid = obj["n_grid"]
        trials = int(obj["trials"])
    except KeyError as exc:
        raise UsageError(f"config missing required key {exc}") from None
    return ExperimentConfig(
        dims=dims,
        truth=truth,
        task=task,
        estimators=tuple(estimators),
        n_grid=tuple(n_grid),
        trials=trials,
        eval_samples=int(obj.get("eval_samples", 200)),
        seed=int(obj["seed"] if seed is None and "seed" in obj else (seed or 0)),
        psd_fix=bool(obj.get("psd_fix", True)),
        jitter=float(obj.get("jitter", 1e-10)),
        resample_sliding=bool(obj.get("resample_sliding", False)),
    )


def result_to_dict(result: ExperimentResult) -> dict:
    return {
        "metadata": result.metadata,
        "curves": {
            label: [
                {
                    "n": pt.n,
                    "mean_rmse": pt.mean_rmse,
                    "stderr": pt.stderr,
                    "failure_rate": pt.failure_rate,
                }
                for pt in points
            ]
            for label, points in result.curves.items()
        },
    }


def canonical_hash(obj) -> str:
    """Hash of the canonicalized config bytes (key order and whitespace invariant)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir, command, config_hash, inputs, outputs, seed):
    from . import __version__

    manifest = {
        "command": command,
        "config_hash": config_hash,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "tool_version": __version__,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
