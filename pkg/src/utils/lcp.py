"""
Solvers for the linear complementarity problem

    w = M z + q,  w >= 0,  z >= 0,  z'w = 0.

Three entry points share one result type:

- lemke: complementary pivoting with covering vector 1, an explicit basis
  inverse updated in product form and least-index tie breaking.
- solve_active_set: re-solve a known complementary basis for a new q, with a
  bounded primal-dual active-set correction.
- extragradient: projected extragradient on the monotone map z -> M z + q.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.exceptions import IterationLimitError, RayTerminationError
from src.logging_setup import logger


@dataclass
class LcpResult:
    z: np.ndarray
    w: np.ndarray
    basis: np.ndarray
    iterations: int
    method: str


def natural_residual(M: np.ndarray, q: np.ndarray, z: np.ndarray) -> float:
    """Max-norm of z - max(z - (Mz + q), 0); zero exactly at solutions."""
    w = M @ z + q
    return float(np.abs(z - np.maximum(z - w, 0.0)).max(initial=0.0))


def _finish(M: np.ndarray, q: np.ndarray, z: np.ndarray, iterations: int, method: str) -> LcpResult:
    z = np.maximum(z, 0.0)
    w = M @ z + q
    return LcpResult(z=z, w=w, basis=z > 0, iterations=iterations, method=method)


def lemke(
    M: np.ndarray,
    q: np.ndarray,
    max_pivots: int = 20000,
    pivot_tol: float = 1e-11,
    refactor_every: int = 100,
) -> LcpResult:
    """Solve the LCP by Lemke's complementary pivoting method.

    Variables are numbered w_j = j, z_j = n + j and the artificial z0 = 2n.

    Raises:
        RayTerminationError: If the method ends on a secondary ray.
        IterationLimitError: If max_pivots is exceeded.
    """
    n = len(q)
    if n == 0 or np.all(q >= 0):
        return _finish(M, q, np.zeros(n), 0, "lemke")

    artificial = 2 * n

    def column(var: int) -> np.ndarray:
        if var < n:
            e = np.zeros(n)
            e[var] = 1.0
            return e
        if var < artificial:
            return -M[:, var - n]
        return -np.ones(n)

    basis = np.arange(n)
    B_inv = np.eye(n)
    xB = q.astype(float).copy()

    # z0 enters and the most negative q_i leaves
    row = int(np.argmin(xB))
    entering = artificial
    pivots = 0
    since_refactor = 0

    while True:
        col = B_inv @ column(entering)
        if pivots > 0:
            mask = col > pivot_tol
            if not np.any(mask):
                raise RayTerminationError(
                    entering=int(entering), ray_norm=float(np.linalg.norm(col)), pivots=pivots
                )
            ratios = np.full(n, np.inf)
            ratios[mask] = np.maximum(xB[mask], 0.0) / col[mask]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
            z0_rows = ties[basis[ties] == artificial]
            if len(z0_rows):
                row = int(z0_rows[0])
            else:
                row = int(ties[np.argmin(basis[ties])])

        pivot = col[row]
        leaving = int(basis[row])
        B_inv[row] /= pivot
        xB[row] /= pivot
        others = np.arange(n) != row
        B_inv[others] -= np.outer(col[others], B_inv[row])
        xB[others] -= col[others] * xB[row]
        basis[row] = entering
        pivots += 1
        since_refactor += 1

        if since_refactor >= refactor_every:
            B = np.column_stack([column(v) for v in basis])
            try:
                B_inv = np.linalg.inv(B)
                xB = B_inv @ q
            except np.linalg.LinAlgError:
                # Keep the product-form inverse on a numerically singular basis
                logger.debug("Lemke refactorization skipped", size=n, pivots=pivots)
            since_refactor = 0

        if leaving == artificial:
            break
        if pivots >= max_pivots:
            raise IterationLimitError(
                f"Lemke pivot limit {max_pivots} reached", residuals={"pivots": float(pivots)}
            )
        # Complement of the leaving variable enters
        entering = leaving + n if leaving < n else leaving - n

    # Refine the final basic solution directly
    B = np.column_stack([column(v) for v in basis])
    try:
        xB = np.linalg.solve(B, q)
    except np.linalg.LinAlgError:
        # Duplicate columns split their value; the caller checks the residuals
        logger.debug("Singular terminal basis, using least squares", size=n, pivots=pivots)
        xB = np.linalg.lstsq(B, q, rcond=None)[0]
        if np.any(xB < -pivot_tol * (1.0 + np.abs(q).max())):
            xB = B_inv @ q
    z = np.zeros(n)
    for pos, var in enumerate(basis):
        if n <= var < artificial:
            z[var - n] = xB[pos]
    logger.debug("Lemke finished", size=n, pivots=pivots)
    return _finish(M, q, z, pivots, "lemke")


def solve_active_set(
    M: np.ndarray,
    q: np.ndarray,
    active: np.ndarray,
    max_iter: int = 12,
    tol: float = 1e-10,
) -> Optional[LcpResult]:
    """Re-solve the LCP on a guessed set of positive z components.

    Returns None when the basis is singular or no complementary solution is
    reached within max_iter corrections.
    """
    n = len(q)
    active = np.asarray(active, dtype=bool).copy()
    for iteration in range(max_iter + 1):
        idx = np.flatnonzero(active)
        z = np.zeros(n)
        if len(idx):
            try:
                z[idx] = np.linalg.solve(M[np.ix_(idx, idx)], -q[idx])
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(z)):
                return None
        w = M @ z + q
        scale = 1.0 + np.abs(q).max(initial=0.0)
        drop = active & (z < -tol * scale)
        add = ~active & (w < -tol * scale)
        if not drop.any() and not add.any():
            if np.abs(w[idx]).max(initial=0.0) > 1e-8 * scale:
                return None
            return _finish(M, q, z, iteration, "active_set")
        active = (active & ~drop) | add
    return None


def extragradient(
    M: np.ndarray,
    q: np.ndarray,
    step: float,
    max_iter: int = 200000,
    tol: float = 1e-10,
    z_init: Optional[np.ndarray] = None,
) -> LcpResult:
    """Projected extragradient on the nonnegative orthant.

    The step must be below 1/||M||_2 for the monotone affine map.

    Raises:
        IterationLimitError: If the natural residual stays above tol.
    """
    n = len(q)
    z = np.zeros(n) if z_init is None else np.maximum(np.asarray(z_init, dtype=float), 0.0)
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        Fz = M @ z + q
        y = np.maximum(z - step * Fz, 0.0)
        z = np.maximum(z - step * (M @ y + q), 0.0)
        if iteration % 50 == 0 or iteration == max_iter:
            residual = natural_residual(M, q, z)
            if residual <= tol:
                logger.debug("Extragradient converged", size=n, iterations=iteration)
                return _finish(M, q, z, iteration, "extragradient")
    raise IterationLimitError(
        f"Extragradient did not converge in {max_iter} iterations",
        residuals={"natural": float(residual)},
    )
