"""Optimizer steps, learning-rate schedules, and stability diagnostics.

The damped second-order update treats the top-k Ritz subspace of the
current batch Hessian as "sharp" and everything orthogonal to it as
"flat": sharp components of the gradient are rescaled by
1/(eta (lambda_i + delta)), the flat remainder by 1/delta. eta > 1
deliberately blunts the sharp directions; eta = 1 is the plain update.

All steps are pure: they take a state, return a new one, and never
mutate arrays in place.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import models
from .lanczos import SpectralDecomposition, lanczos, project_sharp
from .linalg import dense_eigh

SCHEDULE_KINDS = ("flat", "linear_decay", "warmup")


@dataclass(frozen=True)
class ScheduleSpec:
    """Piecewise-linear learning-rate profile over ``total`` steps.

    ``linear_decay`` holds alpha0 for the first half, decays linearly to
    r * alpha0 by 90% of the run, then holds. ``warmup`` holds for the
    first 10%, climbs to kappa * alpha0 by 30%, decays to r * alpha0 by
    90%, then holds.
    """

    kind: str = "flat"
    alpha0: float = 0.01
    total: int = 500
    r: float = 0.01
    kappa: float = 5.0

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.alpha0 <= 0 or self.total < 1:
            raise ValueError("need alpha0 > 0 and total >= 1")


def schedule_lr(sched: ScheduleSpec, t: int | float) -> float:
    """Learning rate at step t (t past total clamps to the final value)."""
    u = min(max(float(t) / sched.total, 0.0), 1.0)
    a0, r, kap = sched.alpha0, sched.r, sched.kappa
    if sched.kind == "flat":
        return a0
    if sched.kind == "linear_decay":
        if u <= 0.5:
            return a0
        if u <= 0.9:
            return a0 * (1.0 - (1.0 - r) * (u - 0.5) / 0.4)
        return a0 * r
    if u <= 0.1:
        return a0
    if u <= 0.3:
        return a0 * (1.0 + (kap - 1.0) * (u - 0.1) / 0.2)
    if u <= 0.9:
        return a0 * (kap - (kap - r) * (u - 0.3) / 0.6)
    return a0 * r


@dataclass(frozen=True)
class OptimConfig:
    alpha0: float = 0.01
    schedule: ScheduleSpec | None = None
    rho: float = 0.0
    delta: float = 1e-2
    eta: float = 1.0
    k: int = 50
    gamma: float = 0.0
    decouple_wd: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_delta_inside_sqrt: bool = False
    refresh_every: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.schedule is None:
            object.__setattr__(self, "schedule", ScheduleSpec(kind="flat", alpha0=self.alpha0))
        if self.eta <= 0 or self.refresh_every < 1:
            raise ValueError("need eta > 0 and refresh_every >= 1")

    def lr(self, t: int) -> float:
        return schedule_lr(self.schedule, t)


@dataclass(frozen=True)
class OptimizerState:
    w: np.ndarray
    t: int = 0
    momentum: np.ndarray | None = None
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    decomp: SpectralDecomposition | None = None


def init_state(w0: np.ndarray) -> OptimizerState:
    return OptimizerState(w=np.asarray(w0, dtype=np.float64).copy())


def _apply_weight_decay(cfg: OptimConfig, w: np.ndarray, g: np.ndarray) -> np.ndarray:
    if cfg.gamma > 0.0 and not cfg.decouple_wd:
        return g + cfg.gamma * w
    return g


def sgd_step(state: OptimizerState, g: np.ndarray, cfg: OptimConfig) -> OptimizerState:
    """Heavy-ball SGD; rho = 0 is plain (stochastic) gradient descent."""
    lr = cfg.lr(state.t)
    g = _apply_weight_decay(cfg, state.w, np.asarray(g, dtype=np.float64))
    buf = g if state.momentum is None else cfg.rho * state.momentum + g
    w = state.w - lr * buf
    if cfg.gamma > 0.0 and cfg.decouple_wd:
        w = w * (1.0 - lr * cfg.gamma)
    return replace(state, w=w, t=state.t + 1, momentum=buf)


def adam_step(state: OptimizerState, g: np.ndarray, cfg: OptimConfig) -> OptimizerState:
    """Adam with the damping coefficient in the denominator.

    Default placement is outside the root (sqrt(v_hat) + delta); the
    inside placement sqrt(v_hat + delta) is a config switch.
    """
    lr = cfg.lr(state.t)
    g = _apply_weight_decay(cfg, state.w, np.asarray(g, dtype=np.float64))
    m = np.zeros_like(state.w) if state.adam_m is None else state.adam_m
    v = np.zeros_like(state.w) if state.adam_v is None else state.adam_v
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
    t1 = state.t + 1
    m_hat = m / (1.0 - cfg.beta1**t1)
    v_hat = v / (1.0 - cfg.beta2**t1)
    if cfg.adam_delta_inside_sqrt:
        denom = np.sqrt(v_hat + cfg.delta)
    else:
        denom = np.sqrt(v_hat) + cfg.delta
    with np.errstate(invalid="ignore", divide="ignore"):
        update = np.where(denom > 0.0, m_hat / denom, 0.0)
    w = state.w - lr * update
    if cfg.gamma > 0.0 and cfg.decouple_wd:
        w = w * (1.0 - lr * cfg.gamma)
    return replace(state, w=w, t=t1, adam_m=m, adam_v=v)


def lanczos_opt_step(
    state: OptimizerState,
    spec: models.ModelSpec,
    x: np.ndarray | None,
    y: np.ndarray | None,
    cfg: OptimConfig,
    delta: float | None = None,
) -> tuple[OptimizerState, models.LossEval]:
    """One damped second-order step from a fresh gradient and Ritz split.

    The batch Hessian's top-k Ritz pairs are recomputed every
    ``refresh_every`` steps (default every step, since the Hessian moves
    with w). Negative Ritz values are clamped at zero before damping, so
    indefinite curvature is treated as flat rather than ascended.

    Returns the new state and the loss evaluation at the pre-step w.
    """
    d = cfg.delta if delta is None else delta
    if d <= 0:
        raise ValueError("the damped update needs delta > 0")
    ev = models.batch_loss_grad(spec, state.w, x, y)
    g = _apply_weight_decay(cfg, state.w, ev.grad)

    decomp = state.decomp
    if decomp is None or state.t % cfg.refresh_every == 0:
        op = models.hvp_operator(spec, state.w, x, y)
        k = min(cfg.k, spec.param_dim)
        decomp = lanczos(op, spec.param_dim, k, seed=_step_seed(cfg.seed, state.t))

    coeffs, flat = project_sharp(decomp, g)
    lam = np.maximum(decomp.values, 0.0)
    sharp_scaled = decomp.vectors @ (coeffs / (cfg.eta * (lam + d)))
    update = sharp_scaled + flat / d
    lr = cfg.lr(state.t)
    w = state.w - lr * update
    if cfg.gamma > 0.0 and cfg.decouple_wd:
        w = w * (1.0 - lr * cfg.gamma)
    return replace(state, w=w, t=state.t + 1, decomp=decomp), ev


def _step_seed(seed: int, t: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, t])


def r_est_curv(decomp: SpectralDecomposition | None, delta: float) -> float:
    """Estimated curvature-damping ratio (lam_max+ + delta)/(lam_min+ + delta).

    A partial decomposition (k < P) leaves the orthogonal complement
    untouched at rate 1/delta, so lam_min+ is 0 there; with the full
    spectrum in hand the smallest clamped eigenvalue is used. No
    decomposition at all (isotropic methods like SGD) gives exactly 1.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if decomp is None:
        return 1.0
    lam_max = max(float(decomp.values[0]), 0.0)
    if decomp.k == decomp.dim:
        lam_min = max(float(decomp.values[-1]), 0.0)
    else:
        lam_min = 0.0
    return (lam_max + delta) / (lam_min + delta)


def stable_lr_bound(
    h: np.ndarray,
    precond_eigs: np.ndarray,
    delta: float = 0.0,
    basis: np.ndarray | None = None,
) -> float:
    """Largest stable learning rate for a damped preconditioned quadratic.

    alpha_max = 2 * (max_i |phi_i' H phi_i| / (eta_i + delta))^-1 where
    eta_i are the preconditioner's eigenvalues along directions phi_i.
    By default the phi_i are H's own eigenvectors (descending order,
    matching the order of ``precond_eigs``); pass ``basis`` to evaluate
    the Rayleigh quotients along other directions.
    """
    h = np.asarray(h, dtype=np.float64)
    if basis is None:
        vals, _ = dense_eigh(h)
        rayleigh = vals
    else:
        rayleigh = np.einsum("ij,ij->j", basis, h @ basis)
    eta = np.broadcast_to(np.asarray(precond_eigs, dtype=np.float64), rayleigh.shape)
    if np.any(eta + delta <= 0):
        raise ValueError("need eta_i + delta > 0 along every direction")
    worst = float(np.max(np.abs(rayleigh) / (eta + delta)))
    if worst == 0.0:
        return np.inf
    return 2.0 / worst
