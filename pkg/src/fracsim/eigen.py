"""Symmetric 3x3 eigen-decomposition.

The compiled path runs cyclic Jacobi rotations per matrix; the numpy path
calls LAPACK through ``np.linalg.eigh``.  Both return eigenvalues in
descending order with each eigenvector's largest-magnitude component made
positive, so results agree up to rounding.
"""

import numpy as np

from ._accel import njit, pick

SYMMETRY_TOL = 1e-10


@njit
def _jacobi3(a, w, v):
    # a is destroyed; w receives eigenvalues, v the eigenvectors as columns
    for i in range(3):
        for j in range(3):
            v[i, j] = 1.0 if i == j else 0.0
    scale = 0.0
    for i in range(3):
        for j in range(3):
            scale += a[i, j] * a[i, j]
    tol = 1e-30 * scale
    for _sweep in range(64):
        off = a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]
        if off <= tol:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(3):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(3):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(3):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    for i in range(3):
        w[i] = a[i, i]
    # sort descending
    for i in range(2):
        best = i
        for j in range(i + 1, 3):
            if w[j] > w[best]:
                best = j
        if best != i:
            tmp = w[i]
            w[i] = w[best]
            w[best] = tmp
            for k in range(3):
                tmp = v[k, i]
                v[k, i] = v[k, best]
                v[k, best] = tmp
    for j in range(3):
        big = 0
        for k in range(1, 3):
            if abs(v[k, j]) > abs(v[big, j]):
                big = k
        if v[big, j] < 0.0:
            for k in range(3):
                v[k, j] = -v[k, j]


@njit
def _eigh3_numba(mats):
    n = mats.shape[0]
    w = np.empty((n, 3))
    v = np.empty((n, 3, 3))
    a = np.empty((3, 3))
    for e in range(n):
        # scale to unit magnitude so squared sums neither underflow nor overflow
        big = 0.0
        for i in range(3):
            for j in range(3):
                big = max(big, abs(mats[e, i, j]))
        if big == 0.0:
            big = 1.0
        for i in range(3):
            for j in range(3):
                a[i, j] = 0.5 * (mats[e, i, j] + mats[e, j, i]) / big
        _jacobi3(a, w[e], v[e])
        for i in range(3):
            w[e, i] *= big
    return w, v


def _eigh3_numpy(mats):
    sym = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    w, v = np.linalg.eigh(sym)
    w = w[:, ::-1]
    v = v[:, :, ::-1]
    big = np.argmax(np.abs(v), axis=1)
    sign = np.where(np.take_along_axis(v, big[:, None, :], axis=1) < 0.0, -1.0, 1.0)
    return np.ascontiguousarray(w), np.ascontiguousarray(v * sign)


_eigh3 = pick(_eigh3_numba, _eigh3_numpy)


def eigh3_batch(mats: np.ndarray):
    """Eigenpairs of a stack of symmetric 3x3 matrices.

    Returns ``(w, v)`` with ``w`` of shape (n, 3) descending and ``v`` of
    shape (n, 3, 3) holding eigenvectors as columns.  Input is symmetrized.
    """
    mats = np.ascontiguousarray(mats, dtype=np.float64).reshape(-1, 3, 3)
    if len(mats) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3, 3))
    return _eigh3(mats)


def eigen_symmetric3(a):
    """Eigenvalues (descending) and eigenvectors (columns) of a symmetric 3x3 matrix.

    Raises ValueError if ``a`` is not symmetric to within 1e-10 of its norm.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {a.shape}")
    norm = np.linalg.norm(a)
    if np.abs(a - a.T).max() > SYMMETRY_TOL * max(norm, 1e-300):
        raise ValueError("matrix is not symmetric")
    w, v = eigh3_batch(a[None])
    return w[0], v[0]
