"""Symmetric eigensolver (cyclic Jacobi, parallel ordering)."""

from __future__ import annotations

import numpy as np

MAX_DIM = 1024


class ConvergenceError(RuntimeError):
    pass


def _round_robin(m: int):
    """Yield (p, q) index arrays of m/2 disjoint pairs; m-1 rounds cover every pair once."""
    players = np.arange(m)
    for _ in range(m - 1):
        top = players[: m // 2]
        bottom = players[m // 2 :][::-1]
        yield np.minimum(top, bottom), np.maximum(top, bottom)
        players = np.concatenate(([players[0]], np.roll(players[1:], 1)))


def off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors (columns) of a real symmetric matrix.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    ``tol * ||A||_F``.  Within a sweep the m-1 rounds of a round-robin
    schedule each rotate m/2 disjoint (p, q) planes at once.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_DIM:
        raise ValueError(f"dimension {a.shape[0]} exceeds {MAX_DIM}")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if n == 0:
        return np.empty(0), np.empty((0, 0))
    m = n + (n % 2)
    if m != n:
        a = np.pad(a, ((0, 1), (0, 1)))
    v = np.eye(m)
    scale = np.linalg.norm(a)
    if scale == 0.0 or n == 1:
        return _sorted(np.diag(a)[:n], v[:n, :n])

    for _ in range(max_sweeps):
        if off_norm(a) <= tol * scale:
            break
        for p, q in _round_robin(m):
            apq = a[p, q]
            live = apq != 0.0
            safe = np.where(live, apq, 1.0)
            tau = (a[q, q] - a[p, p]) / (2.0 * safe)
            # 1/(|tau| + sqrt(1 + tau^2)) written to avoid overflow for huge tau
            big = np.abs(tau) > 1e150
            root = np.where(big, np.abs(tau), np.sqrt(1.0 + np.where(big, 0.0, tau) ** 2))
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + root)
            c = np.where(live, 1.0 / np.sqrt(1.0 + t**2), 1.0)
            s = np.where(live, t * c, 0.0)
            rp, rq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * rp - s[:, None] * rq, s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p], a[:, q]
            a[:, p], a[:, q] = cp * c - cq * s, cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = vp * c - vq * s, vp * s + vq * c
    else:
        if off_norm(a) > tol * scale:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    return _sorted(np.diag(a)[:n], v[:n, :n])


def _sorted(w, v):
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
