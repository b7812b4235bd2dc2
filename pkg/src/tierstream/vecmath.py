"""Dense vector and matrix primitives.

Everything here is a pure function over numpy arrays. Vectors are 1-D
``float64`` arrays, matrices are 2-D.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    InsufficientPointsError,
    NoConvergenceError,
    ZeroNormError,
)

ZERO_NORM_EPS = 1e-12
UNIT_TOL = 1e-6


def as_vector(v: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


def as_matrix(a: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def is_unit(v: np.ndarray, tol: float = UNIT_TOL) -> bool:
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


def normalize(v: Sequence[float] | np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit L2 norm.

    Raises:
        ZeroNormError: if ``||v|| < 1e-12``.
    """
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM_EPS:
        raise ZeroNormError(f"cannot normalize vector with norm {norm:.3g}")
    return arr / norm


def normalize_rows(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    if np.any(norms < ZERO_NORM_EPS):
        raise ZeroNormError("matrix contains a zero-norm row")
    return a / norms


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Inner product of two unit vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"cosine of shapes {u.shape} and {v.shape}")
    return float(min(1.0, max(-1.0, float(u @ v))))


def svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD ``A = U diag(S) V^T`` of a square matrix.

    Returns ``(U, S, V)`` with ``S`` sorted in nonincreasing order. Note that
    ``V`` is returned, not its transpose.

    Raises:
        NoConvergenceError: if LAPACK fails to converge.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"svd expects a square matrix, got {a.shape}")
    try:
        u, s, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(str(exc)) from exc
    return u, s, vt.T


def polar_factor(a: np.ndarray) -> np.ndarray:
    """Orthogonal factor ``U V^T`` of ``a``; the Procrustes solution for ``a = X^T Y``."""
    u, _, v = svd(a)
    return u @ v.T


def spectral_norm(a: np.ndarray, max_iter: int = 1000, rtol: float = 1e-9) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    Iterates until the Rayleigh quotient changes by less than ``rtol``
    (relative) or ``max_iter`` is reached. The start vector is fixed, so the
    result is deterministic.
    """
    a = as_matrix(a)
    if not np.any(a):
        return 0.0
    n = a.shape[1]
    x = np.random.default_rng(0x5EED).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        ax = a @ x
        y = a.T @ ax
        lam_new = float(ax @ ax)
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            # start vector fell in the null space; restart along the largest column
            x = a.T @ a[:, np.argmax(np.linalg.norm(a, axis=0))]
            x /= np.linalg.norm(x)
            continue
        x = y / ny
        if lam_new > 0 and abs(lam_new - lam) < rtol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    # final Rayleigh quotient with the converged direction
    ax = a @ x
    lam = max(lam, float(ax @ ax))
    return float(np.sqrt(lam))


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _init_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # k points in seeded random order, preferring rows with distinct values
    order = rng.permutation(points.shape[0])
    chosen: list[int] = []
    seen: set[bytes] = set()
    leftovers: list[int] = []
    for idx in order:
        key = points[idx].tobytes()
        if key in seen:
            leftovers.append(int(idx))
            continue
        seen.add(key)
        chosen.append(int(idx))
        if len(chosen) == k:
            break
    chosen.extend(leftovers[: k - len(chosen)])
    return points[chosen].copy()


def kmeans(
    points: Sequence[Sequence[float]] | np.ndarray,
    k: int,
    iters: int = 25,
    seed: int = 0,
    history: list[float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with seeded uniform initialization.

    Empty clusters are refilled with the points farthest from their current
    centroid before the mean update. If ``history`` is given, the total
    squared distortion after every iteration is appended to it.

    Returns:
        ``(centroids, assignments)`` where centroids has shape ``(k, d)``.

    Raises:
        InsufficientPointsError: if ``k > len(points)``.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InsufficientPointsError("kmeans needs a non-empty 2-D point array")
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise InsufficientPointsError(f"k={k} exceeds number of points {n}")

    rng = np.random.default_rng(seed)
    centroids = _init_centroids(x, k, rng)
    assign = np.full(n, -1, dtype=np.int64)

    for _ in range(max(1, iters)):
        d2 = _sq_dists(x, centroids)
        new_assign = np.argmin(d2, axis=1)
        best = d2[np.arange(n), new_assign]

        counts = np.bincount(new_assign, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # farthest points first; stable sort keeps ties on lower index
            far = np.argsort(-best, kind="stable")
            taken = 0
            for c in empty:
                if taken >= n or best[far[taken]] <= 0.0:
                    break
                p = far[taken]
                taken += 1
                counts[new_assign[p]] -= 1
                new_assign[p] = c
                counts[c] += 1
                best[p] = 0.0

        converged = np.array_equal(new_assign, assign)
        assign = new_assign
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]

        if history is not None:
            diff = x - centroids[assign]
            history.append(float(np.einsum("ij,ij->", diff, diff)))
        if converged:
            break

    return centroids, assign
