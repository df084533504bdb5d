"""Experiment harness: grid runs, metric traces, CSV emission, sweeps.

A grid experiment trains one model per (delta, eta, seed) cell and
records per-epoch metrics. Cells are independent, so they run in a
worker pool; all randomness is seeded per cell, which keeps emitted
CSVs byte-identical for a fixed spec regardless of pool size.

Divergence is data, not an error: a run that blows up is truncated at
the epoch where it left the finite range and marked in its rows.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import data as datasets
from . import models, optim, shrinkage
from .lanczos import gradient_overlap
from .optim import OptimConfig, ScheduleSpec

TRAIN_HEADER = (
    "run_id,epoch,train_loss,train_err,test_loss,test_err,lr,delta,"
    "r_est_curv,lambda_1,overlap_top10,diverged"
)
HEATMAP_HEADER = "delta,eta,d_train,d_test"
RMT_HEADER = "nu,s,predicted_overlap,measured_mean,measured_std,n_seeds"
DAMPING_HEADER = "n_batches,batch_size,n_probes,sigma_sq_hat,delta_star,beta_star"
STABILITY_HEADER = "alpha,diverged"

# a run whose iterate norm passes this is declared diverged
DIVERGENCE_NORM = 1e8

OPTIMIZERS = ("gd", "sgd", "adam", "lanczos_opt")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a grid run needs; defaults reproduce the 1K-image
    logistic-regression study (full batch, 500 epochs, k = 50)."""

    name: str = "mnist-logistic"
    dataset: str = "mnist"
    data_root: str | None = None
    train_size: int = 1000
    test_size: int | None = None
    standardize: bool = True
    model: str = "softmax_regression"
    hidden_width: int = 32
    optimizer: str = "lanczos_opt"
    alpha0: float = 0.01
    schedule: str = "flat"
    schedule_r: float = 0.01
    schedule_kappa: float = 5.0
    epochs: int = 500
    batch_size: int | None = None
    k: int = 50
    deltas: tuple[float, ...] = (1e-3, 1e-2, 1e-1, 1.0)
    etas: tuple[float, ...] = (1.0, 3.0, 10.0)
    rho: float = 0.0
    gamma: float = 0.0
    decouple_wd: bool = False
    seeds: tuple[int, ...] = (0,)
    trace_every: int = 10
    auto_damp: bool = False
    damp_interval: int = 100
    damp_ema: float = 0.7
    damp_strict: bool = True
    damp_batches: int = 20
    damp_batch_size: int = 128
    damp_probes: int = 8
    subsample_seed: int = 0
    synth_dim: int = 64
    synth_classes: int = 10
    synth_separation: float = 1.0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.dataset not in ("mnist", "fashion", "synthetic"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.model not in ("softmax_regression", "mlp"):
            raise ValueError(f"unknown model {self.model!r}")


@dataclass(frozen=True)
class RunMetrics:
    """Per-epoch traces for one grid cell and seed.

    Arrays all share length = number of completed epochs (shorter than
    requested when the run diverged). lambda_1 / overlap_top10 /
    r_est_curv are sampled on the trace cadence and NaN in between.
    """

    run_id: str
    optimizer: str
    delta: float
    eta: float
    seed: int
    train_loss: np.ndarray
    train_err: np.ndarray
    test_loss: np.ndarray
    test_err: np.ndarray
    lr: np.ndarray
    delta_trace: np.ndarray
    r_est: np.ndarray
    lambda1: np.ndarray
    overlap: np.ndarray
    diverged: bool
    wall_time: float
    damping_history: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def best_train_err(self) -> float:
        return _best(self.train_err)

    def best_test_err(self) -> float:
        return _best(self.test_err)

    def final_test_err(self) -> float:
        return float(self.test_err[-1]) if self.epochs_run else np.nan

    def final_train_err(self) -> float:
        return float(self.train_err[-1]) if self.epochs_run else np.nan


def _best(arr: np.ndarray) -> float:
    finite = arr[np.isfinite(arr)]
    return float(finite.min()) if finite.size else np.inf


def load_experiment_data(spec: ExperimentSpec) -> tuple[datasets.Dataset, datasets.Dataset]:
    """Train/test pair for the experiment, subsampled deterministically."""
    if spec.dataset == "synthetic":
        n_test = spec.test_size if spec.test_size is not None else 1000
        full = datasets.synthetic_blobs(
            spec.train_size + n_test,
            spec.synth_dim,
            spec.synth_classes,
            seed=spec.subsample_seed,
            separation=spec.synth_separation,
        )
        train = datasets.Dataset(
            x=full.x[: spec.train_size],
            y=full.y[: spec.train_size],
            n_classes=full.n_classes,
            name="synthetic-train",
        )
        test = datasets.Dataset(
            x=full.x[spec.train_size :],
            y=full.y[spec.train_size :],
            n_classes=full.n_classes,
            name="synthetic-test",
        )
        return train, test
    loader = datasets.load_mnist if spec.dataset == "mnist" else datasets.load_fashion
    train = loader("train", spec.data_root)
    test = loader("test", spec.data_root)
    if spec.train_size < train.n:
        train = datasets.subsample(train, spec.train_size, seed=spec.subsample_seed)
    if spec.test_size is not None and spec.test_size < test.n:
        test = datasets.subsample(test, spec.test_size, seed=spec.subsample_seed + 1)
    if spec.standardize:
        train, test = datasets.standardize(train, test)
    return train, test


def model_for(spec: ExperimentSpec, train: datasets.Dataset) -> models.ModelSpec:
    if spec.model == "softmax_regression":
        return models.softmax_spec(train.dim, train.n_classes)
    return models.mlp_spec(train.dim, train.n_classes, spec.hidden_width)


def grid_cells(spec: ExperimentSpec) -> list[tuple[float, float]]:
    """(delta, eta) cells; isotropic optimizers collapse the grid."""
    if spec.optimizer == "lanczos_opt":
        return [(d, e) for d in spec.deltas for e in spec.etas]
    if spec.optimizer == "adam":
        return [(d, 1.0) for d in spec.deltas]
    return [(0.0, 1.0)]


def run_id_for(spec: ExperimentSpec, delta: float, eta: float, seed: int) -> str:
    tag = "auto" if spec.auto_damp else "flat"
    if spec.optimizer == "lanczos_opt":
        return f"{spec.optimizer}-{tag}-delta{delta:g}-eta{eta:g}-seed{seed}"
    if spec.optimizer == "adam":
        return f"{spec.optimizer}-delta{delta:g}-seed{seed}"
    return f"{spec.optimizer}-seed{seed}"


def run_experiment(spec: ExperimentSpec, threads: int | None = None) -> list[RunMetrics]:
    """Train every (delta, eta, seed) cell; returns runs in grid order."""
    train, test = load_experiment_data(spec)
    mspec = model_for(spec, train)
    jobs = [
        (delta, eta, seed) for delta, eta in grid_cells(spec) for seed in spec.seeds
    ]
    workers = threads if threads is not None else spec.threads
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda j: _run_single(spec, mspec, train, test, *j), jobs)
            )
    else:
        results = [_run_single(spec, mspec, train, test, *j) for j in jobs]
    return results


def _run_single(
    spec: ExperimentSpec,
    mspec: models.ModelSpec,
    train: datasets.Dataset,
    test: datasets.Dataset,
    delta: float,
    eta: float,
    seed: int,
) -> RunMetrics:
    t_start = time.perf_counter()
    sampler = datasets.BatchSampler(n=train.n, batch_size=spec.batch_size, seed=seed)
    steps_per_epoch = len(sampler.epoch_batches(0))
    sched = ScheduleSpec(
        kind=spec.schedule,
        alpha0=spec.alpha0,
        total=spec.epochs * steps_per_epoch,
        r=spec.schedule_r,
        kappa=spec.schedule_kappa,
    )
    cfg = OptimConfig(
        alpha0=spec.alpha0,
        schedule=sched,
        rho=spec.rho,
        delta=delta if delta > 0 else 1e-2,
        eta=eta,
        k=min(spec.k, mspec.param_dim),
        gamma=spec.gamma,
        decouple_wd=spec.decouple_wd,
        seed=seed,
    )
    state = optim.init_state(models.init_params(mspec, seed=seed))
    damp = (
        shrinkage.initial_damping_state(
            floor=delta,
            ema=spec.damp_ema,
            update_interval=spec.damp_interval,
            strict_floor=spec.damp_strict,
        )
        if spec.auto_damp
        else None
    )

    cols: dict[str, list[float]] = {
        k: [] for k in ("tl", "te", "vl", "ve", "lr", "dl", "re", "l1", "ov")
    }
    diverged = False
    for epoch in range(spec.epochs):
        ep_loss, ep_err, last_lr = [], [], np.nan
        last_ev = None
        for batch in sampler.epoch_batches(epoch):
            xb, yb = train.x[batch], train.y[batch]
            last_lr = cfg.lr(state.t)
            if spec.optimizer == "lanczos_opt":
                state, ev = optim.lanczos_opt_step(
                    state, mspec, xb, yb, cfg,
                    delta=damp.delta if damp is not None else None,
                )
            else:
                ev = models.batch_loss_grad(mspec, state.w, xb, yb)
                if spec.optimizer == "adam":
                    state = optim.adam_step(state, ev.grad, cfg)
                else:
                    state = optim.sgd_step(state, ev.grad, cfg)
            last_ev = ev
            ep_loss.append(ev.loss)
            ep_err.append(np.nan if ev.error is None else ev.error)
            if not np.isfinite(ev.loss) or np.linalg.norm(state.w) > DIVERGENCE_NORM:
                diverged = True
                break
            if damp is not None and damp.update_due(state.t):
                idx = datasets.sample_batches(
                    train,
                    spec.damp_batches,
                    min(spec.damp_batch_size, train.n),
                    seed=np.random.SeedSequence([seed, state.t]),
                )
                sig = shrinkage.estimate_hessian_variance(
                    mspec,
                    state.w,
                    [(train.x[i], train.y[i]) for i in idx],
                    n_probes=spec.damp_probes,
                    seed=np.random.SeedSequence([seed, state.t, 1]),
                )
                damp = shrinkage.auto_damp_update(damp, state.t, sig)

        cols["tl"].append(float(np.mean(ep_loss)))
        cols["te"].append(float(np.mean(ep_err)))
        cols["lr"].append(float(last_lr))
        delta_now = damp.delta if damp is not None else delta
        cols["dl"].append(float(delta_now))
        if diverged:
            cols["vl"].append(np.nan)
            cols["ve"].append(np.nan)
            cols["re"].append(np.nan)
            cols["l1"].append(np.nan)
            cols["ov"].append(np.nan)
            break
        tev = models.evaluate(mspec, state.w, test.x, test.y)
        cols["vl"].append(tev.loss)
        cols["ve"].append(np.nan if tev.error is None else tev.error)
        on_trace = epoch % spec.trace_every == 0 or epoch == spec.epochs - 1
        if on_trace and spec.optimizer == "lanczos_opt" and state.decomp is not None:
            cols["re"].append(optim.r_est_curv(state.decomp, delta_now))
            cols["l1"].append(float(state.decomp.values[0]))
            cols["ov"].append(gradient_overlap(state.decomp, last_ev.grad, top=10))
        elif on_trace and spec.optimizer in ("gd", "sgd"):
            cols["re"].append(1.0)
            cols["l1"].append(np.nan)
            cols["ov"].append(np.nan)
        else:
            cols["re"].append(np.nan)
            cols["l1"].append(np.nan)
            cols["ov"].append(np.nan)

    return RunMetrics(
        run_id=run_id_for(spec, delta, eta, seed),
        optimizer=spec.optimizer,
        delta=delta,
        eta=eta,
        seed=seed,
        train_loss=np.array(cols["tl"]),
        train_err=np.array(cols["te"]),
        test_loss=np.array(cols["vl"]),
        test_err=np.array(cols["ve"]),
        lr=np.array(cols["lr"]),
        delta_trace=np.array(cols["dl"]),
        r_est=np.array(cols["re"]),
        lambda1=np.array(cols["l1"]),
        overlap=np.array(cols["ov"]),
        diverged=diverged,
        wall_time=time.perf_counter() - t_start,
        damping_history=damp.history if damp is not None else (),
    )


def heatmap_deltas(
    runs: Sequence[RunMetrics],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Best-epoch error above the global best, per (delta, eta) cell.

    Seeds are averaged after taking each run's best epoch; a cell whose
    every run diverged before recording a finite error comes out inf.
    Returns (deltas ascending, etas ascending, d_train, d_test).
    """
    deltas = np.array(sorted({r.delta for r in runs}))
    etas = np.array(sorted({r.eta for r in runs}))
    best_tr = np.full((len(deltas), len(etas)), np.inf)
    best_te = np.full((len(deltas), len(etas)), np.inf)
    for i, d in enumerate(deltas):
        for j, e in enumerate(etas):
            cell = [r for r in runs if r.delta == d and r.eta == e]
            if cell:
                best_tr[i, j] = float(np.mean([r.best_train_err() for r in cell]))
                best_te[i, j] = float(np.mean([r.best_test_err() for r in cell]))
    d_train = best_tr - best_tr.min()
    d_test = best_te - best_te.min()
    return deltas, etas, d_train, d_test


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class StabilityResult:
    alphas: np.ndarray
    diverged: np.ndarray
    onset: float
    bound: float


def _quadratic_diverges(
    h: np.ndarray, alpha: float, optimizer: str, delta: float, eta: float,
    steps: int, seed: int,
) -> bool:
    mspec = models.quadratic_spec(h)
    w0 = models.init_params(mspec, seed=seed)
    limit = 1e6 * float(np.linalg.norm(w0))
    cfg = OptimConfig(
        alpha0=alpha,
        schedule=ScheduleSpec(kind="flat", alpha0=alpha, total=steps),
        delta=delta if optimizer == "lanczos_opt" else 1e-2,
        eta=eta,
        k=mspec.param_dim,
        seed=seed,
    )
    state = optim.init_state(w0)
    for _ in range(steps):
        if optimizer == "lanczos_opt":
            state, ev = optim.lanczos_opt_step(state, mspec, None, None, cfg)
        else:
            ev = models.batch_loss_grad(mspec, state.w, None, None)
            state = optim.sgd_step(state, ev.grad, cfg)
        norm = float(np.linalg.norm(state.w))
        if not np.isfinite(norm) or norm > limit:
            return True
    return False


def stability_sweep(
    h: np.ndarray,
    optimizer: str = "gd",
    alphas: Iterable[float] | None = None,
    delta: float = 1e-2,
    eta: float = 1.0,
    steps: int = 400,
    seed: int = 0,
    refine: int = 12,
) -> StabilityResult:
    """Empirical divergence onset of an optimizer on a fixed quadratic.

    Sweeps the given alphas (default: a log grid bracketing the
    theoretical bound), then bisects between the largest stable and the
    smallest diverging alpha. ``bound`` is the closed-form limit for the
    same preconditioner.
    """
    from .linalg import dense_eigh

    vals, _ = dense_eigh(h)
    lam = np.abs(vals)
    if optimizer == "gd":
        bound = 2.0 / float(lam.max())
    elif optimizer == "lanczos_opt":
        bound = 2.0 / float(np.max(lam / (eta * (np.maximum(vals, 0.0) + delta))))
    else:
        raise ValueError("stability sweep supports gd and lanczos_opt")
    if alphas is None:
        alphas = np.geomspace(bound / 4.0, bound * 4.0, 17)
    alphas = np.sort(np.asarray(list(alphas), dtype=np.float64))
    flags = np.array(
        [
            _quadratic_diverges(h, float(a), optimizer, delta, eta, steps, seed)
            for a in alphas
        ]
    )
    if flags.all():
        return StabilityResult(alphas, flags, onset=float(alphas[0]), bound=bound)
    if not flags.any():
        return StabilityResult(alphas, flags, onset=np.inf, bound=bound)
    lo = float(alphas[~flags].max())
    hi = float(alphas[flags].min())
    for _ in range(refine):
        mid = float(np.sqrt(lo * hi))
        if _quadratic_diverges(h, mid, optimizer, delta, eta, steps, seed):
            hi = mid
        else:
            lo = mid
    return StabilityResult(alphas, flags, onset=hi, bound=bound)


# ------------------------------------------------------------- emission


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def emit_csv(runs: Sequence[RunMetrics], path: str | Path) -> Path:
    """Training metrics, one row per (run, epoch), schema TRAIN_HEADER."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(TRAIN_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for r in runs:
            for ep in range(r.epochs_run):
                row_diverged = r.diverged and ep == r.epochs_run - 1
                writer.writerow(
                    [
                        r.run_id,
                        ep,
                        _fmt(r.train_loss[ep]),
                        _fmt(r.train_err[ep]),
                        _fmt(r.test_loss[ep]),
                        _fmt(r.test_err[ep]),
                        _fmt(r.lr[ep]),
                        _fmt(r.delta_trace[ep]),
                        _fmt(r.r_est[ep]),
                        _fmt(r.lambda1[ep]),
                        _fmt(r.overlap[ep]),
                        _fmt(row_diverged),
                    ]
                )
    return path


def parse_metrics_csv(path: str | Path) -> list[dict[str, object]]:
    """Read a train CSV back; floats parsed, diverged as bool."""
    rows: list[dict[str, object]] = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row: dict[str, object] = {"run_id": rec["run_id"], "epoch": int(rec["epoch"])}
            for key in TRAIN_HEADER.split(","):
                if key in ("run_id", "epoch"):
                    continue
                if key == "diverged":
                    row[key] = rec[key] == "true"
                else:
                    row[key] = float(rec[key])
            rows.append(row)
    return rows


def emit_heatmap_csv(
    deltas: np.ndarray,
    etas: np.ndarray,
    d_train: np.ndarray,
    d_test: np.ndarray,
    path: str | Path,
) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(HEATMAP_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for i, d in enumerate(deltas):
            for j, e in enumerate(etas):
                writer.writerow([_fmt(d), _fmt(e), _fmt(d_train[i, j]), _fmt(d_test[i, j])])
    return path


def emit_rmt_csv(rows: Sequence, path: str | Path) -> Path:
    """Overlap-validation rows: (nu, s, predicted, mean, std, n_seeds)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(RMT_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in rows:
            writer.writerow(
                [
                    _fmt(row.nu),
                    _fmt(row.s),
                    _fmt(row.predicted),
                    _fmt(row.measured_mean),
                    _fmt(row.measured_std),
                    int(row.n_seeds),
                ]
            )
    return path


def emit_stability_csv(result: StabilityResult, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(STABILITY_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for a, flag in zip(result.alphas, result.diverged):
            writer.writerow([_fmt(a), _fmt(bool(flag))])
    return path


def emit_damping_csv(
    n_batches: int, batch_size: int, n_probes: int, sigma_sq: float, path: str | Path
) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(DAMPING_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                n_batches,
                batch_size,
                n_probes,
                _fmt(sigma_sq),
                _fmt(shrinkage.optimal_damping(sigma_sq)),
                _fmt(shrinkage.optimal_beta(sigma_sq)),
            ]
        )
    return path


# --------------------------------------------------------------- config


def parse_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; '#' starts a comment, blank lines skip."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


def _coerce(value: str, ftype: str):
    v = value.strip()
    if ftype.startswith("tuple"):
        items = [s.strip() for s in v.split(",") if s.strip()]
        if "int" in ftype:
            return tuple(int(float(s)) for s in items)
        return tuple(float(s) for s in items)
    if "str | None" in ftype or ftype == "str":
        return None if v.lower() in ("none", "") and "None" in ftype else v
    if "int | None" in ftype:
        return None if v.lower() in ("none", "full") else int(float(v))
    if ftype == "bool":
        if v.lower() in ("true", "1", "yes"):
            return True
        if v.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {v!r}")
    if ftype == "int":
        return int(float(v))
    if ftype == "float":
        return float(v)
    return v


def spec_from_config(cfg: dict[str, str], cls, **overrides):
    """Build a dataclass from flat config keys, with type coercion.

    Unknown keys are an error so typos fail loudly instead of silently
    running the defaults.
    """
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in cfg.items():
        if key not in known:
            raise ValueError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(known))}"
            )
        kwargs[key] = _coerce(value, str(known[key].type))
    kwargs.update(overrides)
    return cls(**kwargs)


def experiment_from_config(cfg: dict[str, str], **overrides) -> ExperimentSpec:
    return spec_from_config(cfg, ExperimentSpec, **overrides)
