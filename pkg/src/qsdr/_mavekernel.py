"""Compiled pieces of the composite quantile MAVE direction update.

Kernel weights are stored densely as ``W[t, j, i]`` (level, center, sample).
For fixed planes ``(a, b)`` the residual of pair ``(i, j)`` at level ``t`` is
``Y_i - a[t, j] - b[t, j]' B' (X_i - X_j)``, linear in ``vec(B)`` with row
``kron(X_i - X_j, b[t, j])``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def mave_objective(X, Y, W, a, b, B, taus):
    T, n, _ = W.shape
    Z = X @ B
    total = 0.0
    for t in range(T):
        skew = 2.0 * taus[t] - 1.0
        for j in range(n):
            bz = Z[j] @ b[t, j]
            for i in range(n):
                w = W[t, j, i]
                if w == 0.0:
                    continue
                r = Y[i] - a[t, j] - (Z[i] @ b[t, j] - bz)
                total += w * (abs(r) + skew * r)
    return total


@njit(cache=True)
def mave_direction_irls(X, Y, W, a, b, B, taus, eps, steps, ridge_factor):
    """Reweighted least-squares steps on the smoothed composite check loss.

    Returns the unnormalised update of ``B`` after ``steps`` iterations with
    smoothing ``eps`` held fixed.  A ridge of ``ridge_factor * trace`` is added
    only when the normal matrix is numerically singular.
    """
    T, n, _ = W.shape
    p, q = B.shape
    s = p * q
    beta = B.ravel().copy()
    for _ in range(steps):
        Bc = beta.reshape((p, q))
        Z = X @ Bc
        M = np.zeros((s, s))
        rhs = np.zeros(s)
        for t in range(T):
            skew = 2.0 * taus[t] - 1.0
            for j in range(n):
                bj = b[t, j]
                bz = Z[j] @ bj
                S = np.zeros((p, p))
                v = np.zeros(p)
                any_w = False
                for i in range(n):
                    w = W[t, j, i]
                    if w == 0.0:
                        continue
                    any_w = True
                    r = Y[i] - a[t, j] - (Z[i] @ bj - bz)
                    c = w / np.sqrt(r * r + eps * eps)
                    coef = c * (Y[i] - a[t, j]) + w * skew
                    for k in range(p):
                        xk = X[i, k] - X[j, k]
                        v[k] += coef * xk
                        ck = c * xk
                        for l in range(k, p):
                            S[k, l] += ck * (X[i, l] - X[j, l])
                if not any_w:
                    continue
                for k in range(p):
                    for l in range(k):
                        S[k, l] = S[l, k]
                for k in range(p):
                    for l in range(q):
                        rhs[k * q + l] += v[k] * bj[l]
                        for k2 in range(p):
                            skk = S[k, k2]
                            if skk == 0.0:
                                continue
                            for l2 in range(q):
                                M[k * q + l, k2 * q + l2] += skk * bj[l] * bj[l2]
        if not np.isfinite(M).all():
            break
        if np.linalg.cond(M) > 1e12:
            tr = 0.0
            for k in range(s):
                tr += M[k, k]
            ridge = ridge_factor * max(tr, 1e-300)
            for k in range(s):
                M[k, k] += ridge
        beta = np.linalg.solve(M, rhs)
    return beta.reshape((p, q))
