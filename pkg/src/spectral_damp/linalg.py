"""Dense symmetric linear algebra kept small enough to audit.

Everything downstream (Lanczos, the random-matrix checks, the damped
update) funnels through these few routines, so they validate their
inputs instead of trusting callers.
"""

from __future__ import annotations

import numpy as np

# dense_eigh is for validation-scale problems only; real models go
# through matrix-free Lanczos instead.
DENSE_EIGH_CAP = 2048

SYMMETRY_TOL = 1e-10


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return the symmetric part (a + a.T) / 2 as float64."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def require_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Validate that ``a`` is square and symmetric to within ``tol`` (relative)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    skew = float(np.abs(a - a.T).max())
    if skew > tol * scale:
        raise ValueError(f"matrix is not symmetric: max |a - a.T| = {skew:g}")
    return a


def matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product with shape checking."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a vector, got shape {x.shape}")
    if a.ndim != 2 or a.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {x.shape}")
    return a @ x


def dense_eigh(a: np.ndarray, *, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    a : (P, P) symmetric array, P <= DENSE_EIGH_CAP.
    check : validate symmetry before decomposing.

    Returns
    -------
    (values, vectors) with eigenvalues sorted descending and eigenvectors
    as matching orthonormal columns.
    """
    a = require_symmetric(a) if check else np.asarray(a, dtype=np.float64)
    p = a.shape[0]
    if p > DENSE_EIGH_CAP:
        raise ValueError(
            f"dense eigendecomposition refused for P={p} > {DENSE_EIGH_CAP}; "
            "use the iterative path for problems this large"
        )
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def orthogonalize(
    v: np.ndarray,
    basis: np.ndarray | None,
    *,
    passes: int = 2,
    tol: float = 1e-12,
) -> tuple[np.ndarray | None, float]:
    """Orthogonalize ``v`` against orthonormal columns of ``basis`` and normalize.

    Runs ``passes`` rounds of classical Gram-Schmidt; one pass is not
    enough to hold orthogonality through a long Lanczos run, two is.

    Returns
    -------
    (q, norm) where ``q`` is unit-norm and orthogonal to span(basis).
    ``q`` is None when ``v`` lies in the span (residual norm below
    ``tol`` times the input norm), which callers treat as breakdown.
    """
    v = np.asarray(v, dtype=np.float64).copy()
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return None, 0.0
    if basis is not None and basis.size:
        for _ in range(passes):
            v -= basis @ (basis.T @ v)
    rnorm = float(np.linalg.norm(v))
    if rnorm <= tol * vnorm:
        return None, rnorm
    return v / rnorm, rnorm
