"""Matrix-free Lanczos with full reorthogonalization.

The operator is only ever touched through matvec closures, so the same
code serves dense validation matrices and Hessian-vector products of a
live model. Two-pass Gram-Schmidt against the whole stored basis keeps
the Ritz vectors orthonormal to near machine precision, which the
optimizer's sharp/flat split depends on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .linalg import orthogonalize

# Ritz pairs whose residual estimate exceeds this times the spectral
# norm estimate are flagged (still returned).
RESIDUAL_FLAG_FACTOR = 1e-4


@dataclass(frozen=True)
class SpectralDecomposition:
    """Top-k Ritz approximation of a symmetric operator.

    values : (k,) Ritz values, descending.
    vectors : (dim, k) matching orthonormal columns.
    residuals : (k,) per-pair residual norm estimates.
    flagged : (k,) True where the residual estimate is untrustworthy.
    """

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    flagged: np.ndarray

    def __post_init__(self) -> None:
        k = self.values.shape[0]
        if self.vectors.shape[1] != k or self.residuals.shape[0] != k:
            raise ValueError("inconsistent decomposition shapes")
        if k > 1 and np.any(np.diff(self.values) > 0):
            raise ValueError("Ritz values must be sorted descending")

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]


def lanczos(
    op: Callable[[np.ndarray], np.ndarray],
    dim: int,
    k: int,
    seed: int | np.random.SeedSequence = 0,
    v0: np.ndarray | None = None,
) -> SpectralDecomposition:
    """Run k Lanczos steps on a symmetric operator.

    Parameters
    ----------
    op : matvec closure for a symmetric operator on R^dim.
    k : requested Krylov dimension, 1 <= k <= dim.
    seed : seeds the random start vector (ignored when v0 given).
    v0 : optional start vector, need not be normalized.

    Returns
    -------
    SpectralDecomposition with k' <= k pairs; k' < k means the Krylov
    space closed early (breakdown), in which case the returned pairs
    are exact to orthogonalization precision.
    """
    if not 1 <= k <= dim:
        raise ValueError(f"need 1 <= k <= dim, got k={k}, dim={dim}")
    if v0 is None:
        v0 = np.random.default_rng(seed).normal(size=dim)
    q, _ = orthogonalize(v0, None)
    if q is None:
        raise ValueError("start vector is zero")

    basis = np.empty((dim, k))
    basis[:, 0] = q
    alphas = np.empty(k)
    betas = np.empty(k)  # betas[j] produced while extending from step j+1
    achieved = k
    last_beta = 0.0
    for j in range(k):
        u = op(basis[:, j])
        alphas[j] = float(basis[:, j] @ u)
        # two-pass Gram-Schmidt against the whole basis; the explicit
        # alpha/beta subtraction is subsumed by the first pass
        qnext, rnorm = orthogonalize(u, basis[:, : j + 1])
        betas[j] = rnorm
        last_beta = rnorm
        if qnext is None:
            achieved = j + 1
            last_beta = 0.0
            break
        if j + 1 < k:
            basis[:, j + 1] = qnext

    kk = achieved
    d = alphas[:kk]
    e = betas[: kk - 1]
    if kk == 1:
        tvals, tvecs = np.array([d[0]]), np.array([[1.0]])
    else:
        tvals, tvecs = eigh_tridiagonal(d, e)
    order = np.argsort(tvals)[::-1]
    tvals, tvecs = tvals[order], tvecs[:, order]
    vectors = basis[:, :kk] @ tvecs
    # standard Lanczos residual estimate: |beta_k| * |bottom row of S|
    residuals = np.abs(last_beta * tvecs[kk - 1, :])
    norm_est = float(np.max(np.abs(tvals))) if kk else 0.0
    flagged = residuals > RESIDUAL_FLAG_FACTOR * max(norm_est, 1e-300)
    return SpectralDecomposition(
        values=tvals, vectors=vectors, residuals=residuals, flagged=flagged
    )


def project_sharp(
    decomp: SpectralDecomposition, g: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Split g into Ritz-subspace coefficients and the orthogonal remainder.

    Returns (coeffs, residual) with g == vectors @ coeffs + residual
    exactly; the residual is what the optimizer treats as flat mass.
    """
    g = np.asarray(g, dtype=np.float64)
    coeffs = decomp.vectors.T @ g
    residual = g - decomp.vectors @ coeffs
    return coeffs, residual


def gradient_overlap(decomp: SpectralDecomposition, g: np.ndarray, top: int = 10) -> float:
    """Fraction of gradient mass in the top Ritz directions, in [0, 1]."""
    g = np.asarray(g, dtype=np.float64)
    gnorm2 = float(g @ g)
    if gnorm2 == 0.0:
        return 0.0
    m = min(top, decomp.k)
    coeffs = decomp.vectors[:, :m].T @ g
    return min(1.0, float(coeffs @ coeffs) / gnorm2)
