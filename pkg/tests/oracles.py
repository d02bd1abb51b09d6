"""Independent reference computations used only by the tests.

Nothing here imports the package, so agreement with it is a genuine
cross-check rather than a restatement.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> np.ndarray:
    """Cyclic Jacobi eigenvalues of a real symmetric matrix, ascending."""
    a = np.array(a, dtype=float)
    n = len(a)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(a, 1) ** 2)))
        if off < tol * max(1.0, float(np.abs(a).max())):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * rp - s * rq, s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * cp - s * cq, s * cp + c * cq
    return np.sort(np.diag(a))


def hermitian_eigenvalues(h: np.ndarray) -> np.ndarray:
    """Eigenvalues of a complex Hermitian matrix via its real 2n x 2n embedding."""
    re, im = h.real, h.imag
    big = np.block([[re, -im], [im, re]])
    # every eigenvalue appears twice in the embedding
    return jacobi_eigenvalues(big)[::2]


def spin_matrices(j: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jx, Jy, Jz from the lowering operator, basis m = +j ... -j."""
    ms = [j - k for k in range(int(round(2 * j)) + 1)]
    n = len(ms)
    lower = np.zeros((n, n), dtype=complex)
    for col, m in enumerate(ms):
        if col + 1 < n:
            # <m-1| J- |m>
            lower[col + 1, col] = math.sqrt((j + m) * (j - m + 1))
    raise_ = lower.T.conj()
    jx = (raise_ + lower) / 2
    jy = (raise_ - lower) / 2j
    jz = np.diag(ms).astype(complex)
    return jx, jy, jz


def passive_zyz(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Frame rotation for ZYZ angles in radians, via scipy's active rotation."""
    return Rotation.from_euler("ZYZ", [alpha, beta, gamma]).as_matrix().T


def doublet_spreads(principal, direction) -> np.ndarray:
    """Eigenvalue spread of ``n.I`` inside each zero-field doublet of diag(principal).

    Doublets are returned in ascending zero-field energy.
    """
    jx, jy, jz = spin_matrices(2.5)
    ops = (jx, jy, jz)
    h0 = sum(p * o @ o for p, o in zip(principal, ops))
    _, u = np.linalg.eigh(h0)
    n = np.asarray(direction, dtype=float)
    h1 = sum(c * o for c, o in zip(n, ops))
    out = []
    for i in range(3):
        v = u[:, 2 * i:2 * i + 2]
        w = np.linalg.eigvalsh(v.conj().T @ h1 @ v)
        out.append(w[1] - w[0])
    return np.array(out)
