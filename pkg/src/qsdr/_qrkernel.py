"""Compiled per-problem solver for weighted quantile regression.

One problem is ``min_c sum_i w_i rho_tau(y_i - d_i'c)``.  The solver runs a few
rounds of reweighted least squares on the smoothed loss, tests the vertex
through the smallest residuals against the exact optimality conditions, and
finishes with basis-exchange pivots when the certificate fails.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _rho_sum(D, y, w, c, tau):
    total = 0.0
    for i in range(y.shape[0]):
        r = y[i] - np.dot(D[i], c)
        total += w[i] * (abs(r) + (2.0 * tau - 1.0) * r)
    return total


@njit(cache=True)
def _solve(M, b):
    return np.linalg.solve(M, b)


@njit(cache=True)
def _wls(D, y, wt, extra):
    """Solve ``(D' diag(wt) D) c = D'(wt * y) + extra`` with a vanishing ridge."""
    m, s = D.shape
    M = np.zeros((s, s))
    rhs = extra.copy()
    for i in range(m):
        wi = wt[i]
        if wi == 0.0:
            continue
        for a in range(s):
            da = wi * D[i, a]
            rhs[a] += da * y[i]
            for b in range(a, s):
                M[a, b] += da * D[i, b]
    tr = 0.0
    for a in range(s):
        tr += M[a, a]
        for b in range(a):
            M[a, b] = M[b, a]
    ridge = 1e-13 * max(tr, 1e-300) / s
    for a in range(s):
        M[a, a] += ridge
    return _solve(M, rhs)


@njit(cache=True)
def _lu(A):
    """In-place LU with partial pivoting; returns ``(piv, ok)``."""
    s = A.shape[0]
    piv = np.arange(s)
    big = 0.0
    for a in range(s):
        for b in range(s):
            big = max(big, abs(A[a, b]))
    if not big > 0.0 or not np.isfinite(big):
        return piv, False
    for k in range(s):
        p = k
        best = abs(A[k, k])
        for i in range(k + 1, s):
            if abs(A[i, k]) > best:
                best = abs(A[i, k])
                p = i
        if best <= 1e-12 * big:
            return piv, False
        if p != k:
            for b in range(s):
                tmp = A[k, b]
                A[k, b] = A[p, b]
                A[p, b] = tmp
            tmp_i = piv[k]
            piv[k] = piv[p]
            piv[p] = tmp_i
        for i in range(k + 1, s):
            f = A[i, k] / A[k, k]
            A[i, k] = f
            for b in range(k + 1, s):
                A[i, b] -= f * A[k, b]
    return piv, True


@njit(cache=True)
def _lu_solve(LU, piv, b):
    s = LU.shape[0]
    x = np.empty(s)
    for a in range(s):
        x[a] = b[piv[a]]
    for a in range(s):
        for k in range(a):
            x[a] -= LU[a, k] * x[k]
    for a in range(s - 1, -1, -1):
        for k in range(a + 1, s):
            x[a] -= LU[a, k] * x[k]
        x[a] /= LU[a, a]
    return x


@njit(cache=True)
def _lu_solve_t(LU, piv, b):
    """Solve ``A' x = b`` given the factorisation ``P A = L U``."""
    s = LU.shape[0]
    z = b.copy()
    for a in range(s):
        for k in range(a):
            z[a] -= LU[k, a] * z[k]
        z[a] /= LU[a, a]
    for a in range(s - 1, -1, -1):
        for k in range(a + 1, s):
            z[a] -= LU[k, a] * z[k]
    x = np.empty(s)
    for a in range(s):
        x[piv[a]] = z[a]
    return x


@njit(cache=True)
def _vertex_state(D, y, w, tau, S):
    """Coefficients through rows ``S`` and the multipliers ``g`` of the basis rows.

    Returns ``(ok, c, r, g, LU, piv)``; ``ok`` is False when the basis is singular.
    """
    m, s = D.shape
    LU = np.empty((s, s))
    yS = np.empty(s)
    for a in range(s):
        LU[a] = D[S[a]]
        yS[a] = y[S[a]]
    piv, ok = _lu(LU)
    if not ok:
        return False, np.zeros(s), np.zeros(m), np.zeros(s), LU, piv
    c = _lu_solve(LU, piv, yS)
    r = y - D @ c
    inS = np.zeros(m, dtype=np.bool_)
    for a in range(s):
        inS[S[a]] = True
        r[S[a]] = 0.0
    hi = 2.0 * tau
    lo = 2.0 * tau - 2.0
    rhs = np.zeros(s)
    for i in range(m):
        if inS[i] or w[i] == 0.0:
            continue
        dv = hi if r[i] >= 0.0 else lo
        for a in range(s):
            rhs[a] -= w[i] * dv * D[i, a]
    v = _lu_solve_t(LU, piv, rhs)
    g = np.empty(s)
    for a in range(s):
        g[a] = v[a] / w[S[a]]
    return True, c, r, g, LU, piv


@njit(cache=True)
def _certified(g, tau, kkt_tol):
    lo = 2.0 * tau - 2.0
    hi = 2.0 * tau
    big = 0.0
    for a in range(g.shape[0]):
        big = max(big, abs(g[a]))
    slack = kkt_tol * (1.0 + big)
    for a in range(g.shape[0]):
        if g[a] < lo - slack or g[a] > hi + slack:
            return False
    return True


@njit(cache=True)
def _interpolates(r, y):
    # every residual zero: optimal however the ties are signed
    big = 0.0
    for i in range(y.shape[0]):
        big = max(big, abs(y[i]))
    for i in range(r.shape[0]):
        if abs(r[i]) > 1e-11 * (1.0 + big):
            return False
    return True


@njit(cache=True)
def _smallest(r, s):
    return np.argsort(np.abs(r))[:s].copy()


@njit(cache=True)
def _pivot(D, y, w, tau, S, max_pivots, kkt_tol):
    """Basis exchange from vertex ``S``; returns ``(c, certified, ok)``."""
    m, s = D.shape
    hi = 2.0 * tau
    lo = 2.0 * tau - 2.0
    c = np.zeros(s)
    for _ in range(max_pivots + 1):
        ok, c, r, g, LU, piv = _vertex_state(D, y, w, tau, S)
        if not ok:
            return c, False, False
        if _certified(g, tau, kkt_tol) or _interpolates(r, y):
            return c, True, True
        # candidate exits ordered by how strongly they violate the conditions
        score = np.empty(2 * s)
        for a in range(s):
            score[a] = w[S[a]] * (g[a] - lo)
            score[s + a] = w[S[a]] * (hi - g[a])
        order = np.argsort(score)
        inS = np.zeros(m, dtype=np.bool_)
        for a in range(s):
            inS[S[a]] = True
        moved = False
        for cand in range(2 * s):
            k = order[cand]
            if score[k] >= 0.0:
                break
            l = k % s
            sigma = 1.0 if k < s else -1.0
            e = np.zeros(s)
            e[l] = sigma
            delta = _lu_solve(LU, piv, e)
            z = D @ delta
            # exact right-derivative of the objective along c + t * delta
            slope = w[S[l]] * ((2.0 - 2.0 * tau) if sigma > 0 else 2.0 * tau)
            nb = 0
            for i in range(m):
                if inS[i] or w[i] == 0.0 or z[i] == 0.0:
                    continue
                if r[i] > 0.0:
                    slope -= w[i] * hi * z[i]
                elif r[i] < 0.0:
                    slope -= w[i] * lo * z[i]
                elif z[i] > 0.0:
                    slope += w[i] * (2.0 - 2.0 * tau) * z[i]
                else:
                    slope -= w[i] * 2.0 * tau * z[i]
                if r[i] != 0.0 and r[i] / z[i] > 0.0:
                    nb += 1
            if slope >= 0.0 or nb == 0:
                continue
            tb = np.empty(nb)
            ib = np.empty(nb, dtype=np.int64)
            j = 0
            for i in range(m):
                if inS[i] or w[i] == 0.0 or z[i] == 0.0 or r[i] == 0.0:
                    continue
                t = r[i] / z[i]
                if t > 0.0:
                    tb[j] = t
                    ib[j] = i
                    j += 1
            srt = np.argsort(tb, kind="mergesort")
            enter = ib[srt[nb - 1]]
            for jj in range(nb):
                i = ib[srt[jj]]
                slope += 2.0 * w[i] * abs(z[i])
                if slope >= 0.0:
                    enter = i
                    break
            S[l] = enter
            moved = True
            break
        if not moved:
            return c, False, True
    return c, False, True


@njit(cache=True)
def solve_one(D, y, w, tau, scale, eps_start, eps_min, tol, max_iter,
              steps_per_round, irls_steps, polish, max_pivots, kkt_tol, c0, use_c0):
    """Returns ``(c, objective, converged)`` for a single problem.

    With ``use_c0`` the exchange starts from the rows best fitted by ``c0``
    and the smoothing phase runs only if that fails.
    """
    m_all, s = D.shape
    cnt = 0
    for i in range(m_all):
        if w[i] > 0.0:
            cnt += 1
    Dk = np.empty((cnt, s))
    yk = np.empty(cnt)
    wk = np.empty(cnt)
    j = 0
    for i in range(m_all):
        if w[i] > 0.0:
            Dk[j] = D[i]
            yk[j] = y[i]
            wk[j] = w[i]
            j += 1
    c = np.zeros(s)
    if cnt == 0:
        return c, 0.0, False
    if scale <= 0.0:
        c[0] = yk[0]
        return c, 0.0, True

    if use_c0 and polish and cnt >= s:
        S = _smallest(yk - Dk @ c0, s)
        cv, cert, ok = _pivot(Dk, yk, wk, tau, S, max_pivots, kkt_tol)
        if ok and cert:
            return cv, _rho_sum(Dk, yk, wk, cv, tau), True

    skew = 2.0 * tau - 1.0
    zero_extra = np.zeros(s)
    c = _wls(Dk, yk, wk, zero_extra)
    extra = np.zeros(s)
    for i in range(cnt):
        for a in range(s):
            extra[a] += skew * wk[i] * Dk[i, a]

    budget = min(max_iter, irls_steps) if polish else max_iter
    eps = eps_start * scale
    used = 0
    converged = False
    rel = np.inf
    r = yk - Dk @ c
    can_vertex = polish and cnt >= s
    while used < budget:
        prev = 0.0
        for i in range(cnt):
            prev += wk[i] * (np.sqrt(r[i] * r[i] + eps * eps) + skew * r[i])
        for _ in range(steps_per_round):
            if used >= budget:
                break
            wt = np.empty(cnt)
            for i in range(cnt):
                wt[i] = wk[i] / np.sqrt(r[i] * r[i] + eps * eps)
            c = _wls(Dk, yk, wt, extra)
            r = yk - Dk @ c
            used += 1
            cur = 0.0
            for i in range(cnt):
                cur += wk[i] * (np.sqrt(r[i] * r[i] + eps * eps) + skew * r[i])
            rel = abs(prev - cur) / max(abs(cur), 1e-300)
            prev = cur
            if rel < tol:
                break
        if can_vertex:
            S = _smallest(r, s)
            ok, cv, rv, g, _, _ = _vertex_state(Dk, yk, wk, tau, S)
            if ok and (_certified(g, tau, kkt_tol) or _interpolates(rv, yk)):
                return cv, _rho_sum(Dk, yk, wk, cv, tau), True
        if eps <= eps_min and rel < tol:
            converged = True
            break
        eps = max(0.5 * eps, eps_min)

    obj = _rho_sum(Dk, yk, wk, c, tau)
    if not polish:
        return c, obj, converged or used < max_iter
    if cnt < s:
        return c, obj, converged
    S = _smallest(r, s)
    cv, cert, ok = _pivot(Dk, yk, wk, tau, S, max_pivots, kkt_tol)
    if ok:
        ov = _rho_sum(Dk, yk, wk, cv, tau)
        if ov <= obj:
            return cv, ov, cert
    return c, obj, converged


@njit(cache=True)
def solve_batch(D, y, w, tau, scale, eps_start, eps_min, tol, max_iter,
                steps_per_round, irls_steps, polish, max_pivots, kkt_tol, c0, use_c0):
    B, m, s = D.shape
    coef = np.zeros((B, s))
    obj = np.zeros(B)
    conv = np.zeros(B, dtype=np.bool_)
    for b in range(B):
        c, o, ok = solve_one(D[b], y[b], w[b], tau[b], scale[b], eps_start, eps_min, tol,
                             max_iter, steps_per_round, irls_steps, polish, max_pivots, kkt_tol,
                             c0[b], use_c0[b])
        coef[b] = c
        obj[b] = o
        conv[b] = ok
    return coef, obj, conv
