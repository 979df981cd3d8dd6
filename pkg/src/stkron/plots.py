"""Figure rendering for the CLI report paths (written next to the CSV outputs)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_spectrum", "plot_rmse_curves", "plot_crb_curve"]


def plot_spectrum(rms_energies, pct_rmse_first, path):
    """Stem plot of normalized Kronecker-term RMS energies."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    idx = np.arange(1, len(rms_energies) + 1)
    ax.stem(idx, rms_energies)
    ax.set_xlabel("Kronecker term")
    ax.set_ylabel("normalized RMS energy")
    ax.set_title(f"single-term %RMSE = {pct_rmse_first:.2f}")
    ax.set_xticks(idx)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_rmse_curves(curves, path, title=None):
    """RMSE-versus-sample-size curves, one line per estimator.

    ``curves`` maps label -> sequence of points with n / mean_rmse / stderr.
    """
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for label, points in sorted(curves.items()):
        ns = [pt.n for pt in points]
        means = [pt.mean_rmse for pt in points]
        errs = [pt.stderr for pt in points]
        if len(ns) > 1:
            ax.errorbar(ns, means, yerr=errs, marker="o", capsize=2, label=label)
        else:
            ax.errorbar(ns, means, yerr=errs, marker="s", linestyle="none", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("training samples")
    ax.set_ylabel("prediction RMSE")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_crb_curve(curve, path, label="CRB-predicted RMSE", floor=None):
    """Bound-implied RMSE curve against training sample size."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ns = [n for n, _ in curve]
    vals = [v for _, v in curve]
    ax.plot(ns, vals, marker="o", label=label)
    if floor is not None:
        ax.axhline(floor, color="gray", linestyle="--", label="omniscient floor")
    ax.set_xscale("log")
    ax.set_xlabel("training samples")
    ax.set_ylabel("prediction RMSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
