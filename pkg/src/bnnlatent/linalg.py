"""Dense linear-algebra and clustering kernels.

Everything here is a pure function of its inputs. Matrices are plain
2-D float ``numpy`` arrays.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import eigh as scipy_eigh
from scipy.linalg import solve_triangular

from .errors import EmptyInput, NoConvergence, NonSymmetric, NotPositiveDefinite

SYMMETRY_TOL = 1e-12
# above this size sym_eig(method="auto") hands off to LAPACK
JACOBI_MAX_N = 64


class SymEigResult(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _check_symmetric(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NonSymmetric(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > SYMMETRY_TOL * scale:
        raise NonSymmetric("matrix is not symmetric")
    return A


def cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor computed column by column.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is not strictly positive.
    """
    A = _check_symmetric(A)
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        pivot = A[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > 0.0:
            raise NotPositiveDefinite(f"non-positive pivot {pivot:.3e} at index {j}")
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive-definite ``A``.

    ``B`` may be a vector or a matrix; the result has the same shape.
    Regularising an ill-conditioned ``A`` is the caller's job.
    """
    L = cholesky(A)
    B = np.asarray(B, dtype=float)
    if B.shape[0] != L.shape[0]:
        raise ValueError(f"size mismatch: A is {L.shape}, B has {B.shape[0]} rows")
    Z = solve_triangular(L, B, lower=True)
    return solve_triangular(L.T, Z, lower=False)


def _off_norm(A: np.ndarray) -> float:
    U = np.triu(A, 1)
    return float(np.sqrt(2.0 * np.sum(U * U)))


def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> SymEigResult:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps over all (p, q) pairs in row order, zeroing each off-diagonal
    entry with a plane rotation, until the off-diagonal Frobenius norm
    drops to ``tol * ||A||_F``.
    """
    A = _check_symmetric(A).copy()
    n = A.shape[0]
    V = np.eye(n)
    target = tol * float(np.linalg.norm(A))
    for _ in range(max_sweeps):
        if _off_norm(A) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                with np.errstate(over="ignore"):
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        if _off_norm(A) > target:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return SymEigResult(w[order], V[:, order])


def sym_eig(A: np.ndarray, method: str = "auto", max_sweeps: int = 100, n_lowest: Optional[int] = None) -> SymEigResult:
    """Symmetric eigendecomposition with ascending eigenvalues.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_N`` rows, LAPACK beyond). ``n_lowest`` keeps only the
    smallest eigenpairs, which LAPACK can compute without the full spectrum.
    """
    A = _check_symmetric(A)
    n = A.shape[0]
    if n_lowest is not None and not 1 <= n_lowest <= n:
        raise ValueError(f"n_lowest={n_lowest} must lie in [1, {n}]")
    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        res = jacobi_eigh(A, max_sweeps=max_sweeps)
        if n_lowest is not None:
            res = SymEigResult(res.eigenvalues[:n_lowest], res.eigenvectors[:, :n_lowest])
        return res
    if method == "lapack":
        S = 0.5 * (A + A.T)
        if n_lowest is not None and n_lowest < n:
            w, V = scipy_eigh(S, subset_by_index=[0, n_lowest - 1])
        else:
            w, V = np.linalg.eigh(S)
        return SymEigResult(w, V)
    raise ValueError(f"unknown method {method!r}")


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel so cluster ids appear in order of first occurrence."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=int)
    remap[order] = np.arange(order.size)
    _, inv = np.unique(labels, return_inverse=True)
    return remap[inv]


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[c] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[c:c + 1])[:, 0])
    return centers


def lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    """Lloyd iterations from the given centers.

    Returns ``(labels, centers, history)`` where ``history`` holds the
    within-cluster sum of squares after each assignment step.
    """
    centers = centers.copy()
    labels = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(points, centers)
        new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(new)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
    return labels, centers, history


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    n_init: int = 10,
    max_iter: int = 300,
    return_inertia: bool = False,
):
    """k-means++ seeded Lloyd clustering, best of ``n_init`` restarts.

    Labels are canonicalised (first occurrence order) so results compare
    directly across runs.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise EmptyInput("kmeans needs at least one row")
    if not 1 <= k <= points.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {points.shape[0]}]")
    rng = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(n_init):
        labels, _, history = lloyd(points, _kmeanspp(points, k, rng), max_iter)
        if history[-1] < best_inertia:
            best_labels, best_inertia = labels, history[-1]
    best_labels = _canonical_labels(best_labels)
    if return_inertia:
        return best_labels, best_inertia
    return best_labels
