"""Figure rendering for experiment outputs.

Every CLI report path drops PNG figures next to the CSVs it writes, so
a run directory is self-describing. A small gnuplot script emitter is
kept for pipelines that post-process the CSVs outside Python.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import RunMetrics, StabilityResult
from .rmt import OverlapRow


def _style(ax, xlabel: str, ylabel: str, title: str) -> None:
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=10)
    ax.grid(True, alpha=0.3)


def save_training_figure(runs: Sequence[RunMetrics], path: str | Path) -> Path:
    """Train/test curves plus the damping trace for every run."""
    fig, axes = plt.subplots(2, 2, figsize=(11, 7))
    for r in runs:
        epochs = np.arange(r.epochs_run)
        label = r.run_id
        axes[0, 0].plot(epochs, r.train_loss, label=label, lw=1)
        axes[0, 1].plot(epochs, r.test_err, label=label, lw=1)
        axes[1, 0].plot(epochs, r.train_err, label=label, lw=1)
        axes[1, 1].plot(epochs, r.delta_trace, label=label, lw=1)
    axes[0, 0].set_yscale("log")
    axes[1, 1].set_yscale("log")
    _style(axes[0, 0], "epoch", "train loss", "training loss")
    _style(axes[0, 1], "epoch", "test error", "test error")
    _style(axes[1, 0], "epoch", "train error", "train error")
    _style(axes[1, 1], "epoch", "delta", "damping trace")
    if len(runs) <= 12:
        axes[0, 1].legend(fontsize=6)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_heatmap_figure(
    deltas: np.ndarray,
    etas: np.ndarray,
    d_train: np.ndarray,
    d_test: np.ndarray,
    path: str | Path,
) -> Path:
    """Two panels of best-epoch error above the global best; darker is worse."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, mat, name in ((axes[0], d_train, "train"), (axes[1], d_test, "test")):
        shown = np.where(np.isfinite(mat), mat, np.nan)
        im = ax.imshow(shown, cmap="magma_r", aspect="auto", origin="lower")
        ax.set_xticks(range(len(etas)), [f"{e:g}" for e in etas])
        ax.set_yticks(range(len(deltas)), [f"{d:g}" for d in deltas])
        ax.set_xlabel("eta")
        ax.set_ylabel("delta")
        ax.set_title(f"{name} error above best")
        for i in range(len(deltas)):
            for j in range(len(etas)):
                txt = "div" if not np.isfinite(mat[i, j]) else f"{mat[i, j]:.3f}"
                ax.text(j, i, txt, ha="center", va="center", fontsize=7)
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_overlap_figure(rows: Sequence[OverlapRow], path: str | Path) -> Path:
    """Measured spike overlaps with the closed-form prediction."""
    rows = sorted(rows, key=lambda r: r.nu)
    s = rows[0].s if rows else 1.0
    ratios = np.array([r.nu / r.s for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    grid = np.linspace(max(0.05, ratios.min() * 0.5), ratios.max() * 1.15, 400)
    pred = np.where(grid > 1.0, 1.0 - 1.0 / grid**2, 0.0)
    ax.plot(grid, pred, "k-", lw=1.5, label="predicted 1 - s^2/nu^2")
    ax.errorbar(
        ratios,
        [r.measured_mean for r in rows],
        yerr=[r.measured_std for r in rows],
        fmt="o",
        capsize=3,
        label="measured",
    )
    ax.axvline(1.0, color="gray", ls="--", lw=1, label="threshold nu = s")
    _style(ax, "nu / s", "squared overlap", f"spike recovery (s = {s:.3g})")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_stability_figure(result: StabilityResult, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    stable = ~result.diverged
    ax.scatter(
        result.alphas[stable], np.zeros(stable.sum()), marker="o", label="stable"
    )
    ax.scatter(
        result.alphas[result.diverged],
        np.ones(int(result.diverged.sum())),
        marker="x",
        color="crimson",
        label="diverged",
    )
    ax.axvline(result.bound, color="k", ls="--", lw=1, label="predicted bound")
    if np.isfinite(result.onset):
        ax.axvline(result.onset, color="tab:orange", ls=":", lw=1.5, label="measured onset")
    ax.set_xscale("log")
    ax.set_yticks([0, 1], ["stable", "diverged"])
    _style(ax, "learning rate", "", "divergence onset")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_damping_figure(sigma_sq: float, delta_grid: np.ndarray, path: str | Path) -> Path:
    """Shrinkage MSE curve with the estimated optimum marked."""
    from .shrinkage import optimal_beta, shrinkage_mse

    betas = np.linspace(0.0, 1.0, 401)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(betas, shrinkage_mse(betas, sigma_sq), lw=1.5)
    bstar = optimal_beta(sigma_sq)
    ax.axvline(bstar, color="k", ls="--", lw=1, label=f"beta* = {bstar:.3g}")
    _style(ax, "beta", "E(beta)", f"shrinkage MSE at mu2 = {sigma_sq:.3g}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_plot_script(csv_path: str | Path, path: str | Path, kind: str = "train") -> Path:
    """Write a gnuplot script that renders the given CSV.

    The train flavor plots loss/error curves and the damping trace;
    the heatmap flavor draws the two delta matrices.
    """
    csv_name = Path(csv_path).name
    if kind == "train":
        body = f"""# gnuplot script for {csv_name}
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 1200,800
set output 'curves.png'
set multiplot layout 2,2
set logscale y
set xlabel 'epoch'; set ylabel 'train loss'
plot '{csv_name}' using 2:3 with lines
unset logscale y
set ylabel 'test error'
plot '{csv_name}' using 2:6 with lines
set ylabel 'train error'
plot '{csv_name}' using 2:4 with lines
set logscale y
set ylabel 'delta'
plot '{csv_name}' using 2:8 with lines
unset multiplot
"""
    elif kind == "heatmap":
        body = f"""# gnuplot script for {csv_name}
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 900,400
set output 'heatmap.png'
set multiplot layout 1,2
set logscale x
set xlabel 'delta'; set ylabel 'excess error'
plot '{csv_name}' using 1:3 with points pt 7 title 'train'
plot '{csv_name}' using 1:4 with points pt 5 title 'test'
unset multiplot
"""
    else:
        raise ValueError(f"no plot script flavor {kind!r}")
    path = Path(path)
    path.write_text(body)
    return path
