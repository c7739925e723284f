"""Sparse direct solves with iterative refinement."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# above this size the direct factorisation is replaced by preconditioned GMRES
DIRECT_LIMIT = 200_000


class NumericalError(RuntimeError):
    pass


def solve(A: sp.spmatrix, b: np.ndarray, refine: int = 2) -> np.ndarray:
    """Solve ``A x = b`` (``b`` may be 2-D) with a few refinement steps."""
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=np.float64)
    n = A.shape[0]
    if n == 0:
        return np.zeros_like(b)
    if n > DIRECT_LIMIT:
        return _iterative(A, b)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise NumericalError(f"sparse factorisation failed: {exc}") from exc
    x = lu.solve(b)
    for _ in range(refine):
        x = x + lu.solve(b - A @ x)
    if not np.all(np.isfinite(x)):
        raise NumericalError("linear solve produced non-finite values")
    return x


def _iterative(A, b):
    ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
    M = spla.LinearOperator(A.shape, ilu.solve)
    cols = b.reshape(b.shape[0], -1)
    out = np.empty_like(cols)
    for k in range(cols.shape[1]):
        x, info = spla.gmres(A, cols[:, k], M=M, rtol=1e-13, atol=0.0, restart=200, maxiter=2000)
        if info != 0:
            raise NumericalError(f"GMRES did not converge (info={info})")
        out[:, k] = x
    return out.reshape(b.shape)
