"""Nonnegative and simplex-constrained least squares kernels.

These are the inner solvers used by every unmixing algorithm in the
package: an active-set NNLS, the sum-to-one row augmentation that turns
it into a fully constrained (simplex) solve, and an exhaustive lattice
oracle used to verify the solver independently.

All functions are stateless and reentrant; they can be called
concurrently from per-pixel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ConvergenceError, ShapeError, ValidationError


@dataclass(frozen=True, eq=False)
class FclsSolution:
    """Simplex-constrained least squares solution for one pixel.

    ``abundance`` is nonnegative and sums to one exactly (renormalized);
    ``residual_norm`` is the Euclidean norm against the unaugmented system.
    ``degenerate`` marks the uniform-vector fallback for all-zero NNLS
    output, which never raises mid-sequence.
    """

    abundance: np.ndarray
    residual_norm: float
    iterations: int
    degenerate: bool = False


def nnls(A, b, tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Solve ``min ||A x - b||`` subject to ``x >= 0``.

    Parameters
    ----------
    A : array_like, shape (m, k)
    b : array_like, shape (m,)
    tol : float, optional
        Dual (KKT) tolerance. It is applied relative to
        ``max(1, ||A.T b||_inf)`` so termination does not depend on the
        overall scaling of the problem.
    max_iter : int, optional
        Cap on active-set outer iterations (default ``3 * k``).

    Returns
    -------
    x : numpy.ndarray, shape (k,)
        Nonnegative minimizer. At return the gradient ``A.T (A x - b)``
        is zero on the support and ``>= -tol * scale`` elsewhere.

    Raises
    ------
    ValidationError
        If the inputs contain non-finite values or are empty.
    ConvergenceError
        If the outer loop exceeds ``max_iter`` additions.

    Notes
    -----
    Classic Lawson-Hanson active-set iteration run on the normal
    equations, which is exact and fast for the small column counts used
    here (k is the number of materials plus one at most).
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValidationError("A must be a nonempty 2-D matrix")
    if b.shape != (A.shape[0],):
        raise ShapeError(f"b must have length {A.shape[0]}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValidationError("nnls inputs must be finite")
    gram = A.T @ A
    rhs = A.T @ b
    x, _ = _nnls_gram(gram, rhs, tol=tol, max_iter=max_iter)
    return x


def _nnls_gram(gram: np.ndarray, rhs: np.ndarray, tol: float = 1e-10,
               max_iter: int | None = None) -> tuple[np.ndarray, int]:
    """Lawson-Hanson on normal equations ``gram = A.T A``, ``rhs = A.T b``.

    Tries the unconstrained solve first: when it is strictly positive it is
    the NNLS optimum (zero gradient everywhere) and no active-set iteration
    is needed.
    """
    k = rhs.shape[0]
    if max_iter is None:
        max_iter = 3 * k
    if max_iter > 0:
        try:
            z = np.linalg.solve(gram, rhs)
            if np.all(np.isfinite(z)) and z.min() > 0.0:
                return z, 0
        except np.linalg.LinAlgError:
            pass
    thresh = tol * max(1.0, float(np.abs(rhs).max()))
    x = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    w = rhs.copy()
    outer = 0
    while True:
        candidates = ~passive & (w > thresh)
        if not candidates.any():
            break
        if outer >= max_iter:
            raise ConvergenceError(f"active-set iteration cap {max_iter} exceeded")
        outer += 1
        j = int(np.argmax(np.where(candidates, w, -np.inf)))
        passive[j] = True
        inner = 0
        while True:
            z = _solve_passive(gram, rhs, passive)
            if z.size == 0:
                break
            if z.min() > 0.0:
                break
            inner += 1
            if inner > 2 * k + 2:
                raise ConvergenceError("inner feasibility loop failed to settle")
            xp = x[passive]
            neg = z <= 0.0
            denom = xp[neg] - z[neg]
            ratios = np.where(denom > 0.0, xp[neg] / np.where(denom > 0.0, denom, 1.0), 0.0)
            alpha = float(ratios.min())
            x[passive] = xp + alpha * (z - xp)
            drop = passive & (x <= 1e-14)
            x[drop] = 0.0
            passive[drop] = False
        x.fill(0.0)
        x[passive] = z
        w = rhs - gram @ x
    return x, outer


def _solve_passive(gram: np.ndarray, rhs: np.ndarray, passive: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(passive)
    sub = gram[np.ix_(idx, idx)]
    try:
        return np.linalg.solve(sub, rhs[idx])
    except np.linalg.LinAlgError:
        # rank-deficient support (e.g. duplicated columns): minimum-norm solve
        return np.linalg.lstsq(sub, rhs[idx], rcond=None)[0]


def fcls(M, y, weight: float | None = None) -> FclsSolution:
    """Fully constrained least squares via sum-to-one row augmentation.

    Appends the row ``weight * 1^T`` to ``M`` and ``weight`` to ``y``,
    solves the resulting NNLS problem, then renormalizes the output to an
    exact unit sum. The default weight is ``1e3 *`` the mean absolute
    entry of ``M``, large enough that the renormalization is a small
    correction. The reported residual is measured against the original,
    unaugmented system.
    """
    M = np.asarray(M, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if M.ndim != 2:
        raise ValidationError("M must be a 2-D matrix")
    bands, mats = M.shape
    if y.shape != (bands,):
        raise ShapeError(f"y must have length {bands}")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(y))):
        raise ValidationError("fcls inputs must be finite")
    if weight is None:
        weight = 1e3 * float(np.abs(M).mean())
        if weight == 0.0:
            weight = 1e3
    if not (weight > 0 and math.isfinite(weight)):
        raise ValidationError("weight must be a positive finite number")
    w2 = weight * weight
    gram = M.T @ M + w2
    rhs = M.T @ y + w2
    x, iters = _nnls_gram(gram, rhs)
    return _finish_fcls(M, y, x, iters)


def _finish_fcls(M: np.ndarray, y: np.ndarray, x: np.ndarray, iters: int) -> FclsSolution:
    total = float(x.sum())
    if total <= 0.0:
        abundance = np.full(M.shape[1], 1.0 / M.shape[1])
        degenerate = True
    else:
        abundance = x / total
        degenerate = False
    abundance.setflags(write=False)
    residual = float(np.linalg.norm(y - M @ abundance))
    return FclsSolution(abundance, residual, iters, degenerate)


# Grid oracle limits; the lattice size grows combinatorially with P.
GRID_MAX_MATERIALS = 4
GRID_MAX_RESOLUTION = 400


def fcls_grid_oracle(M, y, resolution: int) -> FclsSolution:
    """Exhaustive simplex-lattice search, an independent check on :func:`fcls`.

    Evaluates ``||y - M a||`` at every lattice point ``a = k / resolution``
    with nonnegative integer parts summing to ``resolution`` and returns
    the best one. Only small material counts are supported; the
    ``iterations`` field reports the number of lattice points scanned.
    """
    M = np.asarray(M, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if M.ndim != 2:
        raise ValidationError("M must be a 2-D matrix")
    mats = M.shape[1]
    if mats > GRID_MAX_MATERIALS:
        raise ValidationError(f"grid oracle unsupported for P > {GRID_MAX_MATERIALS}")
    if not (1 <= resolution <= GRID_MAX_RESOLUTION):
        raise ValidationError(f"resolution must be in [1, {GRID_MAX_RESOLUTION}]")
    if y.shape != (M.shape[0],):
        raise ShapeError(f"y must have length {M.shape[0]}")
    pts = simplex_lattice(mats, resolution)
    gram = M.T @ M
    rhs = M.T @ y
    # ||y - Ma||^2 = y.y - 2 a.rhs + a.G.a, cheaper than forming M @ a.T
    obj = (y @ y) - 2.0 * (pts @ rhs) + np.einsum("ij,ij->i", pts @ gram, pts)
    best = int(np.argmin(obj))
    abundance = pts[best].copy()
    abundance /= abundance.sum()
    abundance.setflags(write=False)
    residual = float(np.linalg.norm(y - M @ abundance))
    return FclsSolution(abundance, residual, pts.shape[0])


def grid_gap_bound(M, resolution: int) -> float:
    """Worst-case objective gap between the lattice optimum and the true one."""
    M = np.asarray(M, dtype=np.float64)
    return 2.0 * float(np.linalg.norm(M, 2)) * M.shape[1] / resolution


@lru_cache(maxsize=8)
def simplex_lattice(parts: int, resolution: int) -> np.ndarray:
    """All compositions of ``resolution`` into ``parts`` as points on the simplex."""
    comps = _compositions(resolution, parts)
    pts = comps.astype(np.float64) / resolution
    pts.setflags(write=False)
    return pts


def _compositions(total: int, parts: int) -> np.ndarray:
    if parts == 1:
        return np.array([[total]], dtype=np.int32)
    if parts == 2:
        first = np.arange(total + 1, dtype=np.int32)
        return np.stack([first, total - first], axis=1)
    blocks = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        head = np.full((rest.shape[0], 1), first, dtype=np.int32)
        blocks.append(np.hstack([head, rest]))
    return np.vstack(blocks)
