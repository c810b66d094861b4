"""One-sided (Hestenes) Jacobi SVD.

Columns are orthogonalized by plane rotations. The n columns are held as
contiguous rows of a work array split into a top and bottom half; each round
rotates the n/2 disjoint (top[k], bottom[k]) pairs in one vectorized update,
then the rows are shuffled so every pair meets once per sweep of n - 1 rounds.
Tall inputs are reduced to their square triangular factor first.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


def round_robin_next(n: int) -> np.ndarray:
    """Row permutation that advances the pairing by one round (n even)."""
    h = n // 2
    top = list(range(h))
    bottom = list(range(h, n))
    new_top = [top[0]] + ([bottom[0]] + top[1:-1] if h > 1 else [])
    new_bottom = bottom[1:] + [top[-1]] if h > 1 else bottom
    return np.array(new_top + new_bottom)


def _jacobi_rows(work: np.ndarray, tol: float, max_sweeps: int):
    """Orthogonalize the rows of ``work`` (n_pad x m) in place; returns (work, v)."""
    n = work.shape[0]
    h = n // 2
    v = np.eye(n)
    perm = round_robin_next(n)
    for _ in range(max_sweeps):
        rotated = False
        for _ in range(n - 1):
            up, uq = work[:h], work[h:]
            alpha = np.einsum("ij,ij->i", up, up)
            beta = np.einsum("ij,ij->i", uq, uq)
            gamma = np.einsum("ij,ij->i", up, uq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if active.any():
                rotated = True
                g = np.where(active, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                t = np.where(active, t, 0.0)
                c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
                s = c * t[:, None]
                new_p = c * up - s * uq
                work[h:] = s * up + c * uq
                work[:h] = new_p
                vp, vq = v[:h], v[h:]
                new_vp = c * vp - s * vq
                v[h:] = s * vp + c * vq
                v[:h] = new_vp
            work = work[perm]
            v = v[perm]
        if not rotated:
            return work, v
    raise NumericError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")


def jacobi_svd(a, tol: float = 1e-15, max_sweeps: int = 60):
    """Thin SVD ``a = u @ diag(s) @ vt`` with ``s`` sorted descending.

    Works in float64. Returns ``u`` (m x k), ``s`` (k,), ``vt`` (k x n) with
    ``k = min(m, n)``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite entries in SVD input")
    m, n = a.shape
    if m < n:
        u, s, vt = jacobi_svd(a.T, tol, max_sweeps)
        return vt.T, s, u.T
    if n == 0:
        return np.zeros((m, 0)), np.zeros(0), np.zeros((0, 0))

    q = None
    if m > n:
        q, a = np.linalg.qr(a)

    # rows of work are the columns of a; v accumulates the row rotations
    n_pad = n + (n % 2)
    work = np.zeros((n_pad, a.shape[0]))
    work[:n] = a.T
    if n_pad > 1:
        work, v = _jacobi_rows(work, tol, max_sweeps)
    else:
        v = np.eye(1)
    # work = v @ a.T  ->  a = work.T @ v  (v orthogonal, rows track columns)
    keep = np.ones(n_pad, dtype=bool)
    if n_pad != n:
        keep[np.argmax(np.abs(v[:, n]))] = False  # the zero padding row
    work, v = work[keep], v[keep][:, :n]

    sigma = np.linalg.norm(work, axis=1)
    order = np.argsort(-sigma, kind="stable")
    sigma, work, v = sigma[order], work[order], v[order]
    u = np.zeros((a.shape[0], n))
    nz = sigma > 0
    u[:, nz] = (work[nz] / sigma[nz, None]).T
    if q is not None:
        u = q @ u
    return u, sigma, v


JACOBI_MAX_RANK = 128


def svd(a, backend: str = "auto"):
    """Thin SVD dispatch.

    ``"jacobi"`` always uses :func:`jacobi_svd`; ``"lapack"`` uses
    ``numpy.linalg.svd``; ``"auto"`` picks Jacobi while the smaller side is at
    most ``JACOBI_MAX_RANK`` and LAPACK beyond that, where the pure-numpy
    rotation loop gets slow.
    """
    a = np.asarray(a, dtype=np.float64)
    if backend == "auto":
        backend = "jacobi" if min(a.shape) <= JACOBI_MAX_RANK else "lapack"
    if backend == "jacobi":
        return jacobi_svd(a)
    if backend == "lapack":
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite entries in SVD input")
        return np.linalg.svd(a, full_matrices=False)
    raise ValueError(f"unknown SVD backend {backend!r}")
