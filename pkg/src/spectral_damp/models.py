"""Losses with gradients and exact Hessian-vector products.

Three model kinds cover the study:

* ``softmax_regression``: multiclass logistic regression on a bias-augmented
  design matrix. For a linear model with cross-entropy the Hessian equals
  the Gauss-Newton matrix, so the HVP is computed analytically from the
  class probabilities rather than by double backprop.
* ``mlp``: one hidden tanh layer. The HVP is a hand-derived
  forward-over-reverse sweep (Pearlmutter's trick); exists to exercise
  non-convex curvature, depth is deliberately out of scope.
* ``quadratic``: loss 0.5 w'Hw for a fixed symmetric H, the analytically
  solvable test bench.

Parameters are always a flat float64 vector. Losses are means over the
batch; no regularizer lives here (weight decay belongs to the optimizer).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import require_symmetric

KINDS = ("softmax_regression", "mlp", "quadratic")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n_features: int = 0
    n_classes: int = 10
    hidden_width: int = 32
    quad: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "quadratic":
            if self.quad is None:
                raise ValueError("quadratic model needs its matrix")
            require_symmetric(self.quad)
        elif self.n_features <= 0 or self.n_classes < 2:
            raise ValueError("classification models need n_features and n_classes")

    @property
    def param_dim(self) -> int:
        if self.kind == "softmax_regression":
            return self.n_classes * (self.n_features + 1)
        if self.kind == "mlp":
            h, d, c = self.hidden_width, self.n_features, self.n_classes
            return h * d + h + c * h + c
        return self.quad.shape[0]


def softmax_spec(n_features: int, n_classes: int = 10) -> ModelSpec:
    return ModelSpec(kind="softmax_regression", n_features=n_features, n_classes=n_classes)


def mlp_spec(n_features: int, n_classes: int = 10, hidden_width: int = 32) -> ModelSpec:
    return ModelSpec(
        kind="mlp", n_features=n_features, n_classes=n_classes, hidden_width=hidden_width
    )


def quadratic_spec(h: np.ndarray) -> ModelSpec:
    return ModelSpec(kind="quadratic", quad=np.asarray(h, dtype=np.float64))


@dataclass(frozen=True)
class LossEval:
    loss: float
    grad: np.ndarray | None = None
    error: float | None = None


def init_params(spec: ModelSpec, seed: int = 0) -> np.ndarray:
    """Starting point: zeros for softmax regression (loss ln C there),
    small scaled Gaussians for the MLP, a unit Gaussian for quadratics."""
    rng = np.random.default_rng(seed)
    if spec.kind == "softmax_regression":
        return np.zeros(spec.param_dim)
    if spec.kind == "mlp":
        h, d, c = spec.hidden_width, spec.n_features, spec.n_classes
        w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=(c, h))
        return np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)])
    return rng.normal(size=spec.param_dim)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones((len(x), 1))], axis=1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _unpack_mlp(spec: ModelSpec, w: np.ndarray):
    h, d, c = spec.hidden_width, spec.n_features, spec.n_classes
    i0, i1, i2 = h * d, h * d + h, h * d + h + c * h
    return (
        w[:i0].reshape(h, d),
        w[i0:i1],
        w[i1:i2].reshape(c, h),
        w[i2:],
    )


def _mlp_forward(spec: ModelSpec, w: np.ndarray, x: np.ndarray):
    w1, b1, w2, b2 = _unpack_mlp(spec, w)
    a1 = np.tanh(x @ w1.T + b1)
    z2 = a1 @ w2.T + b2
    return w1, b1, w2, b2, a1, z2


def batch_loss_grad(spec: ModelSpec, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> LossEval:
    """Mean loss, gradient, and (for classifiers) error rate on one batch."""
    w = np.asarray(w, dtype=np.float64)
    if spec.kind == "quadratic":
        hw = spec.quad @ w
        return LossEval(loss=0.5 * float(w @ hw), grad=hw)

    if spec.kind == "softmax_regression":
        xa = _augment(x)
        logits = xa @ w.reshape(spec.n_classes, -1).T
        p = _softmax(logits)
        b = len(y)
        nll = -np.log(np.maximum(p[np.arange(b), y], 1e-300))
        g = p.copy()
        g[np.arange(b), y] -= 1.0
        grad = (g.T @ xa) / b
        err = float(np.mean(np.argmax(logits, axis=1) != y))
        return LossEval(loss=float(nll.mean()), grad=grad.ravel(), error=err)

    w1, b1, w2, b2, a1, z2 = _mlp_forward(spec, w, x)
    p = _softmax(z2)
    b = len(y)
    nll = -np.log(np.maximum(p[np.arange(b), y], 1e-300))
    dz2 = p.copy()
    dz2[np.arange(b), y] -= 1.0
    dz2 /= b
    gw2 = dz2.T @ a1
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ w2) * (1.0 - a1 * a1)
    gw1 = dz1.T @ x
    gb1 = dz1.sum(axis=0)
    grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
    err = float(np.mean(np.argmax(z2, axis=1) != y))
    return LossEval(loss=float(nll.mean()), grad=grad, error=err)


def evaluate(spec: ModelSpec, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> LossEval:
    """Loss and error only; skips the gradient work for metric passes."""
    if spec.kind == "quadratic":
        return LossEval(loss=0.5 * float(w @ (spec.quad @ w)))
    if spec.kind == "softmax_regression":
        logits = _augment(x) @ np.asarray(w).reshape(spec.n_classes, -1).T
    else:
        logits = _mlp_forward(spec, np.asarray(w), x)[5]
    p = _softmax(logits)
    b = len(y)
    nll = -np.log(np.maximum(p[np.arange(b), y], 1e-300))
    err = float(np.mean(np.argmax(logits, axis=1) != y))
    return LossEval(loss=float(nll.mean()), error=err)


def hvp_operator(
    spec: ModelSpec, w: np.ndarray, x: np.ndarray | None, y: np.ndarray | None
) -> Callable[[np.ndarray], np.ndarray]:
    """Hessian-vector product closure at fixed (w, batch).

    The per-point forward quantities are computed once here and reused
    across applications, which is what makes a k-step Lanczos pass cheap.
    """
    w = np.asarray(w, dtype=np.float64)

    if spec.kind == "quadratic":
        h = spec.quad
        return lambda v: h @ v

    if spec.kind == "softmax_regression":
        xa = _augment(x)
        p = _softmax(xa @ w.reshape(spec.n_classes, -1).T)
        b = len(xa)

        def apply(v: np.ndarray) -> np.ndarray:
            s = xa @ v.reshape(spec.n_classes, -1).T
            t = p * (s - (p * s).sum(axis=1, keepdims=True))
            return (t.T @ xa).ravel() / b

        return apply

    w1, b1, w2, b2, a1, z2 = _mlp_forward(spec, w, x)
    p = _softmax(z2)
    b = len(x)
    dz2 = p.copy()
    dz2[np.arange(b), y] -= 1.0
    dz2 /= b
    da1 = dz2 @ w2
    s1 = 1.0 - a1 * a1

    def apply_mlp(v: np.ndarray) -> np.ndarray:
        v1, c1, v2, c2 = _unpack_mlp(spec, v)
        rz1 = x @ v1.T + c1
        ra1 = s1 * rz1
        rz2 = a1 @ v2.T + ra1 @ w2.T + c2
        rp = p * (rz2 - (p * rz2).sum(axis=1, keepdims=True))
        rdz2 = rp / b
        rgw2 = rdz2.T @ a1 + dz2.T @ ra1
        rgb2 = rdz2.sum(axis=0)
        rda1 = rdz2 @ w2 + dz2 @ v2
        rdz1 = rda1 * s1 + da1 * (-2.0 * a1 * ra1)
        rgw1 = rdz1.T @ x
        rgb1 = rdz1.sum(axis=0)
        return np.concatenate([rgw1.ravel(), rgb1, rgw2.ravel(), rgb2])

    return apply_mlp


def hvp(
    spec: ModelSpec,
    w: np.ndarray,
    x: np.ndarray | None,
    y: np.ndarray | None,
    v: np.ndarray,
) -> np.ndarray:
    return hvp_operator(spec, w, x, y)(np.asarray(v, dtype=np.float64))


def dense_hessian(
    spec: ModelSpec, w: np.ndarray, x: np.ndarray | None, y: np.ndarray | None
) -> np.ndarray:
    """Assemble the full Hessian column by column through the HVP.

    Intended for validation-scale problems; refuses past the dense cap.
    """
    from .linalg import DENSE_EIGH_CAP

    p = spec.param_dim
    if p > DENSE_EIGH_CAP:
        raise ValueError(f"dense Hessian refused for P={p} > {DENSE_EIGH_CAP}")
    op = hvp_operator(spec, w, x, y)
    h = np.empty((p, p))
    e = np.zeros(p)
    for i in range(p):
        e[i] = 1.0
        h[:, i] = op(e)
        e[i] = 0.0
    return h
