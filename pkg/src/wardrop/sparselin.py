"""Jacobi-preconditioned conjugate gradients with constant-mode projection.

The Neumann Laplace step produces a symmetric positive semidefinite system
whose kernel is the constant vector; ``project_constants`` keeps the right
hand side and all iterates orthogonal to it, which selects the zero-mean
solution.  Matrices are scipy CSR, assembled once and shared read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    breakdown: bool = False
    residual_norms: np.ndarray = field(default=None, repr=False)


def cg_solve(A, b, tol=1e-10, maxit=None, project_constants=False):
    """Solve A x = b by preconditioned CG; returns (x, SolveReport).

    A must be symmetric positive (semi)definite in CSR/CSC form.  With
    ``project_constants`` the input must have zero mean (within 1e-8
    relative) and the returned solution has exactly zero mean.  The
    returned iterate is the one with the smallest residual norm seen,
    so recorded residual minima are honoured even if CG stagnates.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if maxit is None:
        maxit = 10 * n

    if project_constants:
        bnorm_inf = np.abs(b).max() if n else 0.0
        if abs(b.sum()) > 1e-8 * max(1.0, bnorm_inf) * n:
            raise ValueError("projected solve requires a zero-mean right-hand side")
        b = b - b.mean()

    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)

    def precondition(v):
        w = inv_diag * v
        if project_constants:
            w = w - w.mean()
        return w

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, residual_norms=np.zeros(1))

    x = np.zeros(n)
    r = b.copy()
    z = precondition(r)
    p = z.copy()
    rz = r @ z
    history = [1.0]
    best_x = x.copy()
    best_res = 1.0
    breakdown = False
    k = 0
    for k in range(1, maxit + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0 or not np.isfinite(pAp):
            breakdown = True
            break
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        if project_constants:
            r = r - r.mean()
        res = np.linalg.norm(r) / bnorm
        history.append(res)
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res <= tol:
            break
        z = precondition(r)
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p

    x = best_x
    if project_constants:
        x = x - x.mean()
    report = SolveReport(
        iterations=k,
        relative_residual=best_res,
        breakdown=breakdown or best_res > tol,
        residual_norms=np.array(history),
    )
    return x, report
