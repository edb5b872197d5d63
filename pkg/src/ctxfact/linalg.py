"""Dense kernels shared by the ALS updates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free square operator on flat vectors of length ``dim``."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def materialize(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.dim)])


def gram(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    G = M.T @ M
    # BLAS may round the two triangles differently
    return np.triu(G) + np.triu(G, 1).T


def hadamard(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A * B


def solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cholesky solve of ``A x = b`` for symmetric positive-definite ``A``."""
    try:
        c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        w = np.linalg.eigvalsh(A)
        raise NotPositiveDefiniteError(
            f"system matrix is not positive definite (min eigenvalue {w.min():.3g}); "
            "is the regularization zero for an empty row?"
        ) from exc
    return scipy.linalg.cho_solve(c, b, check_finite=False)


def cg_solve(op: LinearOperator | np.ndarray, rhs: np.ndarray, steps: int,
             x0: np.ndarray | None = None, tol: float = 1e-12) -> np.ndarray:
    """Run at most ``steps`` conjugate-gradient iterations from ``x0``.

    Stops early once the residual norm drops below ``tol``.
    """
    apply = op.apply if isinstance(op, LinearOperator) else (lambda v: op @ v)
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64)
    steps = min(steps, rhs.size)
    if steps <= 0:
        return x
    r = rhs - apply(x)
    rr = r @ r
    if np.sqrt(rr) < tol:
        return x
    p = r.copy()
    for _ in range(steps):
        Ap = apply(p)
        pAp = p @ Ap
        if pAp <= 0:
            break
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = r @ r
        if np.sqrt(rr_new) < tol:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x
