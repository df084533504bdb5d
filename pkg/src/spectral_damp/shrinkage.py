"""Damping as linear shrinkage, and the online damping estimator.

Inverting H + delta I is, up to the fixed factor kappa = 1 + delta,
the same as inverting the shrunk matrix beta H + (1 - beta) I with
beta = 1/(1 + delta):

    1/(lambda + delta) = [1/(beta lambda + 1 - beta)] * (1/kappa)

For additive noise of per-dimension second moment mu2 = P^-1 Tr X^2,
the shrinkage MSE E(beta) = beta^2 mu2 + (1 - beta)^2 is minimized at
beta* = 1/(1 + mu2), i.e. the MSE-optimal damping is delta* = mu2.
That quantity is what the probe-based estimator below measures from
batch-to-batch Hessian fluctuations, and what the auto-damping state
tracks during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import models

# Loose floor mode bottoms out at this fraction of the configured floor.
LOOSE_FLOOR_FACTOR = 1e-2


@dataclass(frozen=True)
class ShrinkageParams:
    """Shrinkage intensity beta and the matching inverse scale kappa."""

    beta: float
    kappa: float


def shrinkage_from_delta(delta: float) -> ShrinkageParams:
    """Map damping delta >= 0 to its shrinkage form (beta, kappa)."""
    if delta < 0:
        raise ValueError("damping must be nonnegative")
    beta = 1.0 / (1.0 + delta)
    return ShrinkageParams(beta=beta, kappa=1.0 + delta)


def delta_from_shrinkage(beta: float) -> float:
    """Inverse map: beta in (0, 1] back to the damping coefficient."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    return (1.0 - beta) / beta


def shrunk_matrix(h: np.ndarray, beta: float, target: np.ndarray | None = None) -> np.ndarray:
    """beta * h + (1 - beta) * target, target defaulting to the identity."""
    h = np.asarray(h, dtype=np.float64)
    if target is None:
        target = np.eye(h.shape[0])
    return beta * h + (1.0 - beta) * target


def shrinkage_mse(beta, mu2: float) -> np.ndarray:
    """Expected per-dimension error E(beta) = beta^2 mu2 + (1 - beta)^2."""
    beta = np.asarray(beta, dtype=np.float64)
    return beta * beta * mu2 + (1.0 - beta) ** 2


def optimal_beta(mu2: float) -> float:
    if mu2 < 0:
        raise ValueError("mu2 must be nonnegative")
    return 1.0 / (1.0 + mu2)


def optimal_damping(mu2: float) -> float:
    """MSE-optimal damping delta* = mu2; dual of optimal_beta."""
    if mu2 < 0:
        raise ValueError("mu2 must be nonnegative")
    return float(mu2)


def matrix_second_moment(x: np.ndarray) -> float:
    """mu2 = P^-1 Tr X^2 = ||X||_F^2 / P for symmetric X."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum(x * x) / x.shape[0])


def estimate_variance_from_ops(
    ops: Sequence,
    dim: int,
    n_probes: int = 8,
    seed: int | np.random.SeedSequence = 0,
) -> float:
    """Probe-based per-dimension variance of a family of symmetric operators.

    For each unit Gaussian probe v the per-operator images h_i = H_i v give

        est(v) = (1/N) sum_i ||h_i||^2  -  || (1/N) sum_i h_i ||^2
               = (1/N) sum_i ||(H_i - Hbar) v||^2,

    an unbiased Hutchinson estimate of P^-1 Tr[(1/N) sum (H_i - Hbar)^2].
    (For symmetric H_i, ||H_i v||^2 equals v'H_i^2 v, so one application
    per operator serves both moments.) Estimates are averaged over
    ``n_probes`` probes and clipped below at zero.
    """
    if len(ops) < 2:
        raise ValueError("need at least two operators to see fluctuation")
    if n_probes < 1:
        raise ValueError("need at least one probe")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_probes):
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        mean_hv = np.zeros(dim)
        sq = 0.0
        for op in ops:
            hv = op(v)
            sq += float(hv @ hv)
            mean_hv += hv
        sq /= len(ops)
        mean_hv /= len(ops)
        total += sq - float(mean_hv @ mean_hv)
    return max(total / n_probes, 0.0)


def estimate_hessian_variance(
    spec: models.ModelSpec,
    w: np.ndarray,
    batches: Sequence[tuple[np.ndarray, np.ndarray]],
    n_probes: int = 8,
    seed: int | np.random.SeedSequence = 0,
) -> float:
    """Hessian-fluctuation estimate across data batches at the point w.

    Builds one HVP operator per batch (each reuses its own forward
    pass across probes) and defers to estimate_variance_from_ops.
    """
    if len(batches) < 2:
        raise ValueError("need at least two batches to see fluctuation")
    ops = [models.hvp_operator(spec, w, x, y) for x, y in batches]
    return estimate_variance_from_ops(ops, spec.param_dim, n_probes, seed)


@dataclass(frozen=True)
class DampingState:
    """Online damping coefficient with an EMA tracker and a floor.

    ``delta`` is what the optimizer uses right now. ``floor`` is the
    configured initial/minimum damping; in strict mode delta never falls
    below it, otherwise it may drop to LOOSE_FLOOR_FACTOR times it.
    """

    delta: float
    floor: float
    ema: float = 0.7
    update_interval: int = 100
    strict_floor: bool = True
    last_estimate: float | None = None
    history: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.delta <= 0 or self.floor <= 0:
            raise ValueError("damping and floor must be positive")
        if not 0.0 <= self.ema < 1.0:
            raise ValueError("ema coefficient must lie in [0, 1)")
        if self.update_interval < 1:
            raise ValueError("update interval must be >= 1")

    def update_due(self, step: int) -> bool:
        return step > 0 and step % self.update_interval == 0


def initial_damping_state(
    floor: float,
    ema: float = 0.7,
    update_interval: int = 100,
    strict_floor: bool = True,
) -> DampingState:
    return DampingState(
        delta=floor,
        floor=floor,
        ema=ema,
        update_interval=update_interval,
        strict_floor=strict_floor,
    )


def auto_damp_update(state: DampingState, step: int, sigma_sq: float) -> DampingState:
    """Fold a fresh variance estimate into the damping coefficient.

    No-op unless an update is due at ``step``. Otherwise
    delta <- max(floor_policy, ema * delta + (1 - ema) * sigma_sq)
    with floor_policy = floor (strict) or LOOSE_FLOOR_FACTOR * floor.
    """
    if not state.update_due(step):
        return state
    floor_val = state.floor if state.strict_floor else LOOSE_FLOOR_FACTOR * state.floor
    new_delta = max(floor_val, state.ema * state.delta + (1.0 - state.ema) * sigma_sq)
    return replace(
        state,
        delta=new_delta,
        last_estimate=float(sigma_sq),
        history=state.history + ((step, new_delta),),
    )
