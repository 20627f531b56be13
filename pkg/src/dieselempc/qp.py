"""Dense primal active-set solver for small strictly convex QPs.

    minimize   0.5 z'Hz + g'z
    subject to A z <= b

The method starts from a caller-supplied feasible point, optionally with a
guess of the active set (warm start), and moves along equality-constrained
steps, adding blocking constraints and dropping the one with the most negative
multiplier.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError


class QPError(NumericError):
    """Raised when the subproblem cannot be solved (bad start, cycling, singular KKT)."""


@dataclass(frozen=True)
class QPResult:
    z: np.ndarray
    multipliers: np.ndarray  # one per inequality row, >= 0
    active: tuple[int, ...]
    iterations: int
    objective: float


def _kkt_solve(H, grad, Aw):
    n, m = H.shape[0], Aw.shape[0]
    if m == 0:
        return np.linalg.solve(H, -grad), np.empty(0)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    rhs = np.concatenate([-grad, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _independent(A, rows, tol=1e-10) -> bool:
    if not rows:
        return True
    sub = A[list(rows)]
    return np.linalg.matrix_rank(sub, tol) == len(rows)


def solve_qp(H, g, A, b, z0, active0=(), max_iter: int = 200, tol: float = 1e-9) -> QPResult:
    """Solve the QP from the feasible point ``z0``.

    ``active0`` is a warm-start working set; rows that are not active at ``z0``
    or would make the working set rank deficient are ignored.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, H.shape[0])
    b = np.asarray(b, dtype=float)
    z = np.array(z0, dtype=float)
    if H.shape != (len(z), len(z)) or g.shape != z.shape or len(b) != len(A):
        raise DomainError("inconsistent QP dimensions")
    scale = 1.0 + np.abs(b)
    viol = A @ z - b
    if np.any(viol > 1e-7 * scale):
        raise QPError(f"start point infeasible by {viol.max():.3e}")

    work: list[int] = []
    for i in active0:
        if 0 <= i < len(b) and abs(viol[i]) <= 1e-9 * scale[i] and i not in work \
                and _independent(A, work + [i]):
            work.append(i)

    lam_w = np.empty(0)
    for it in range(1, max_iter + 1):
        grad = H @ z + g
        p, lam_w = _kkt_solve(H, grad, A[work])
        if not np.all(np.isfinite(p)):
            raise QPError("non-finite step")
        if np.max(np.abs(p)) <= tol * (1.0 + np.max(np.abs(z))):
            if len(work) == 0 or np.min(lam_w) >= -tol * (1.0 + np.max(np.abs(grad))):
                lam = np.zeros(len(b))
                lam[work] = np.maximum(lam_w, 0.0)
                obj = float(0.5 * z @ H @ z + g @ z)
                return QPResult(z, lam, tuple(sorted(work)), it, obj)
            work.pop(int(np.argmin(lam_w)))
            continue
        Ap = A @ p
        alpha, block = 1.0, -1
        slack = b - A @ z
        for i in np.flatnonzero(Ap > 1e-14):
            if i in work:
                continue
            step = max(slack[i], 0.0) / Ap[i]
            if step < alpha:
                alpha, block = step, int(i)
        z = z + alpha * p
        if block >= 0:
            work.append(block)
    raise QPError(f"active-set iteration limit {max_iter} reached")


__all__ = ["QPError", "QPResult", "solve_qp"]
