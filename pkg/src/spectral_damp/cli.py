"""Command-line entry point.

spectral-damp {train, heatmap, rmt-validate, estimate-damping, stability}
    --config <path> --out <dir> [--seed N] [--threads N]

Each subcommand writes CSVs (and rendered figures, plus a gnuplot
script where one applies) into --out. Configs are flat key = value
files; every key has a default, so --config may be omitted. Runs that
diverge are recorded in the output rather than treated as failures;
the exit code is 0 unless the arguments themselves are unusable.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data as datasets
from . import harness, models, report, rmt, shrinkage


@dataclass(frozen=True)
class RmtValidateSpec:
    p: int = 1024
    b: int = 100
    sigma: float = 1.0
    nu_over_s: tuple[float, ...] = (0.8, 1.5, 2.0, 3.0, 5.0)
    n_seeds: int = 20
    seed: int = 0


@dataclass(frozen=True)
class EstimateSpec:
    dataset: str = "mnist"
    data_root: str | None = None
    standardize: bool = True
    model: str = "softmax_regression"
    hidden_width: int = 32
    train_size: int = 1000
    n_batches: int = 20
    batch_size: int = 128
    n_probes: int = 8
    seed: int = 0
    synth_dim: int = 64
    synth_classes: int = 10
    synth_separation: float = 1.0


@dataclass(frozen=True)
class StabilitySpec:
    spectrum: tuple[float, ...] = (10.0, 4.0, 1.0, 0.1)
    spectrum_dim: int = 0  # pad spectrum with zeros up to this size
    optimizer: str = "gd"
    delta: float = 1e-2
    eta: float = 1.0
    steps: int = 400
    seed: int = 0


def _load_config(path: str | None) -> dict[str, str]:
    return harness.parse_config(path) if path else {}


def _cmd_train(args, emit_heatmap: bool) -> int:
    cfg = _load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    spec = harness.experiment_from_config(cfg, **overrides)
    runs = harness.run_experiment(spec, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = harness.emit_csv(runs, out / "train_metrics.csv")
    report.emit_plot_script(csv_path, out / "plot_train.gp", kind="train")
    report.save_training_figure(runs, out / "training_curves.png")
    print(f"wrote {csv_path}")
    for r in runs:
        status = "diverged" if r.diverged else "ok"
        print(
            f"  {r.run_id}: {r.epochs_run} epochs, "
            f"final train err {r.final_train_err():.4f}, "
            f"final test err {r.final_test_err():.4f} [{status}]"
        )
    if emit_heatmap:
        deltas, etas, d_train, d_test = harness.heatmap_deltas(runs)
        hm_path = harness.emit_heatmap_csv(deltas, etas, d_train, d_test, out / "heatmap.csv")
        report.emit_plot_script(hm_path, out / "plot_heatmap.gp", kind="heatmap")
        report.save_heatmap_figure(deltas, etas, d_train, d_test, out / "heatmap.png")
        print(f"wrote {hm_path}")
    return 0


def _cmd_rmt(args) -> int:
    spec = harness.spec_from_config(_load_config(args.config), RmtValidateSpec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    rows = rmt.overlap_table(
        spec.p, spec.b, spec.sigma, spec.nu_over_s, spec.n_seeds, spec.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = harness.emit_rmt_csv(rows, out / "rmt_overlap.csv")
    report.save_overlap_figure(rows, out / "rmt_overlap.png")
    print(f"wrote {csv_path}")
    for row in rows:
        print(
            f"  nu/s = {row.nu / row.s:.2f}: predicted {row.predicted:.4f}, "
            f"measured {row.measured_mean:.4f} +- {row.measured_std:.4f} "
            f"({row.n_seeds} seeds)"
        )
    return 0


def _cmd_estimate(args) -> int:
    spec = harness.spec_from_config(_load_config(args.config), EstimateSpec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    exp = harness.ExperimentSpec(
        dataset=spec.dataset,
        data_root=spec.data_root,
        standardize=spec.standardize,
        model=spec.model,
        hidden_width=spec.hidden_width,
        train_size=spec.train_size,
        subsample_seed=spec.seed,
        synth_dim=spec.synth_dim,
        synth_classes=spec.synth_classes,
        synth_separation=spec.synth_separation,
    )
    train, _ = harness.load_experiment_data(exp)
    mspec = harness.model_for(exp, train)
    w = models.init_params(mspec, seed=spec.seed)
    idx = datasets.sample_batches(
        train, spec.n_batches, min(spec.batch_size, train.n), seed=spec.seed
    )
    sigma_sq = shrinkage.estimate_hessian_variance(
        mspec,
        w,
        [(train.x[i], train.y[i]) for i in idx],
        n_probes=spec.n_probes,
        seed=spec.seed + 1,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = harness.emit_damping_csv(
        spec.n_batches, spec.batch_size, spec.n_probes, sigma_sq, out / "damping.csv"
    )
    report.save_damping_figure(sigma_sq, np.array([]), out / "shrinkage_mse.png")
    print(f"wrote {csv_path}")
    print(
        f"  sigma^2 = {sigma_sq:.6g}; optimal damping delta* = "
        f"{shrinkage.optimal_damping(sigma_sq):.6g}, "
        f"beta* = {shrinkage.optimal_beta(sigma_sq):.6g}"
    )
    return 0


def _cmd_stability(args) -> int:
    spec = harness.spec_from_config(_load_config(args.config), StabilitySpec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    spectrum = np.asarray(spec.spectrum, dtype=np.float64)
    if spec.spectrum_dim > len(spectrum):
        spectrum = np.concatenate(
            [spectrum, np.zeros(spec.spectrum_dim - len(spectrum))]
        )
    h = datasets.synthetic_quadratic(spectrum, seed=spec.seed)
    result = harness.stability_sweep(
        h,
        optimizer=spec.optimizer,
        delta=spec.delta,
        eta=spec.eta,
        steps=spec.steps,
        seed=spec.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = harness.emit_stability_csv(result, out / "stability.csv")
    report.save_stability_figure(result, out / "stability.png")
    print(f"wrote {csv_path}")
    print(
        f"  optimizer {spec.optimizer}: measured onset {result.onset:.6g}, "
        f"predicted bound {result.bound:.6g}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectral-damp",
        description="curvature-aware optimization with damping as shrinkage",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train a (delta, eta, seed) grid and emit metric curves"),
        ("heatmap", "train the grid and emit best-epoch error deltas"),
        ("rmt-validate", "Monte-Carlo check of the spike-overlap law"),
        ("estimate-damping", "probe-based Hessian variance and optimal damping"),
        ("stability", "empirical divergence onset vs the closed-form bound"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="flat key = value file")
        p.add_argument("--out", type=str, default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker pool size")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args, emit_heatmap=False)
        if args.command == "heatmap":
            return _cmd_train(args, emit_heatmap=True)
        if args.command == "rmt-validate":
            return _cmd_rmt(args)
        if args.command == "estimate-damping":
            return _cmd_estimate(args)
        if args.command == "stability":
            return _cmd_stability(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
