"""Compiled inner loops.

The design is stored transposed (``A`` is k x n, C-contiguous) so every
per-coefficient pass over observations walks contiguous memory.

Status codes returned by the solvers:

    0  converged
    1  iteration limit hit
    2  normal-equations matrix lost positive definiteness
    3  (preprocessing, restart mode) caller must restart with a new prelim
"""

from __future__ import annotations

import numba as nb
import numpy as np

_BIG = 1e20

OK = 0
MAX_ITER = 1
NUMERICAL = 2
RESTART = 3


@nb.njit(cache=True, fastmath=True)
def _gram(A, q, G):
    k, m = A.shape
    for a in range(k):
        Aa = A[a]
        for b in range(a + 1):
            Ab = A[b]
            s = 0.0
            for i in range(m):
                s += q[i] * Aa[i] * Ab[i]
            G[a, b] = s
            G[b, a] = s


@nb.njit(cache=True, fastmath=True)
def _A_mul(A, v, out):
    k, m = A.shape
    for a in range(k):
        Aa = A[a]
        s = 0.0
        for i in range(m):
            s += Aa[i] * v[i]
        out[a] = s


@nb.njit(cache=True, fastmath=True)
def _At_mul(A, v, out):
    k, m = A.shape
    for i in range(m):
        out[i] = 0.0
    for a in range(k):
        Aa = A[a]
        va = v[a]
        for i in range(m):
            out[i] += Aa[i] * va


@nb.njit(cache=True)
def _cholesky(G, L):
    k = G.shape[0]
    for j in range(k):
        s = G[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if not s > 0.0:
            return False
        d = np.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, k):
            t = G[i, j]
            for p in range(j):
                t -= L[i, p] * L[j, p]
            L[i, j] = t / d
        for i in range(j):
            L[i, j] = 0.0
    return True


@nb.njit(cache=True)
def _chol_solve(L, rhs, out):
    k = L.shape[0]
    for i in range(k):
        t = rhs[i]
        for p in range(i):
            t -= L[i, p] * out[p]
        out[i] = t / L[i, i]
    for i in range(k - 1, -1, -1):
        t = out[i]
        for p in range(i + 1, k):
            t -= L[p, i] * out[p]
        out[i] = t / L[i, i]


@nb.njit(cache=True)
def lu_solve(M, rhs):
    """Gaussian elimination with partial pivoting; returns (x, ok)."""
    k = M.shape[0]
    U = M.copy()
    x = rhs.copy()
    scale = 0.0
    for i in range(k):
        for j in range(k):
            if abs(U[i, j]) > scale:
                scale = abs(U[i, j])
    if scale == 0.0:
        return x, False
    for col in range(k):
        piv = col
        for i in range(col + 1, k):
            if abs(U[i, col]) > abs(U[piv, col]):
                piv = i
        if abs(U[piv, col]) <= 1e-13 * scale:
            return x, False
        if piv != col:
            for j in range(k):
                t = U[col, j]
                U[col, j] = U[piv, j]
                U[piv, j] = t
            t = x[col]
            x[col] = x[piv]
            x[piv] = t
        for i in range(col + 1, k):
            f = U[i, col] / U[col, col]
            if f != 0.0:
                for j in range(col, k):
                    U[i, j] -= f * U[col, j]
                x[i] -= f * x[col]
    for i in range(k - 1, -1, -1):
        t = x[i]
        for j in range(i + 1, k):
            t -= U[i, j] * x[j]
        x[i] = t / U[i, i]
    return x, True


@nb.njit(cache=True)
def _constant_row(A):
    k, m = A.shape
    for a in range(k):
        v = A[a, 0]
        if v == 0.0:
            continue
        same = True
        for i in range(1, m):
            if A[a, i] != v:
                same = False
                break
        if same:
            return a
    return -1


@nb.njit(cache=True, fastmath=True)
def _bound(v, dv):
    out = _BIG
    for i in range(v.size):
        if dv[i] < 0.0:
            t = -v[i] / dv[i]
            if t < out:
                out = t
    return out


@nb.njit(cache=True)
def check_objective(A, yv, tau, beta):
    k, m = A.shape
    fit = np.empty(m)
    _At_mul(A, beta, fit)
    s = 0.0
    for i in range(m):
        u = yv[i] - fit[i]
        if u > 0.0:
            s += tau * u
        else:
            s += (tau - 1.0) * u
    return s


@nb.njit(cache=True, fastmath=True)
def fnb(A, yv, tau, beta0, warm, gap_tol, max_iter, step):
    """Frisch-Newton interior point for the dual of the check-loss LP.

    Dual problem: max y'a  s.t.  X'a = (1 - tau) X'1,  0 <= a <= 1, with the
    Mehrotra predictor-corrector. Returns (beta, iterations, gap, status).
    """
    k, m = A.shape
    c = -yv
    ones = np.ones(m)
    b = np.empty(k)
    _A_mul(A, ones, b)
    b *= 1.0 - tau
    x = np.full(m, 1.0 - tau)
    s = np.full(m, tau)
    G = np.empty((k, k))
    L = np.empty((k, k))
    yd = np.empty(k)
    rhs = np.empty(k)
    dy = np.empty(k)
    tmp = np.empty(m)
    if warm:
        for a in range(k):
            yd[a] = -beta0[a]
    else:
        _gram(A, ones, G)
        if not _cholesky(G, L):
            return np.zeros(k), 0, np.inf, NUMERICAL
        _A_mul(A, c, rhs)
        _chol_solve(L, rhs, yd)
        # move the least-squares start to the tau-quantile along a constant column
        jc = _constant_row(A)
        if jc >= 0:
            _At_mul(A, yd, tmp)
            for i in range(m):
                tmp[i] = -c[i] + tmp[i]
            j = min(max(int(np.ceil(tau * m)) - 1, 0), m - 1)
            qv = np.partition(tmp, j)[j]
            yd[jc] -= qv / A[jc, 0]
    r = np.empty(m)
    _At_mul(A, yd, tmp)
    absmean = 0.0
    for i in range(m):
        r[i] = c[i] - tmp[i]
        absmean += abs(r[i])
    absmean /= m
    floor = max(1e-6 * absmean, 1e-12)
    z = np.empty(m)
    w = np.empty(m)
    for i in range(m):
        z[i] = max(r[i], 0.0)
        w[i] = max(-r[i], 0.0)
        if abs(r[i]) < floor:
            z[i] += floor
            w[i] += floor
    gap = 0.0
    for i in range(m):
        gap += c[i] * x[i] + w[i]
    for a in range(k):
        gap -= yd[a] * b[a]

    q = np.empty(m)
    dx = np.empty(m)
    ds = np.empty(m)
    dz = np.empty(m)
    dw = np.empty(m)
    xi = np.empty(m)
    dxdz = np.empty(m)
    dsdw = np.empty(m)
    ix = np.empty(m)
    iz = np.empty(m)
    corr = np.empty(k)
    it = 0
    while gap > gap_tol and it < max_iter:
        it += 1
        for i in range(m):
            ix[i] = 1.0 / x[i]
            iz[i] = 1.0 / s[i]
            q[i] = 1.0 / (z[i] * ix[i] + w[i] * iz[i])
            r[i] = z[i] - w[i]
        _gram(A, q, G)
        if not _cholesky(G, L):
            return -yd, it, gap, NUMERICAL
        # b - A x restores any drift in primal feasibility
        for i in range(m):
            tmp[i] = q[i] * r[i] - x[i]
        _A_mul(A, tmp, rhs)
        for a in range(k):
            rhs[a] += b[a]
        _chol_solve(L, rhs, dy)
        _At_mul(A, dy, tmp)
        for i in range(m):
            dx[i] = q[i] * (tmp[i] - r[i])
            ds[i] = -dx[i]
            dz[i] = -z[i] * (dx[i] * ix[i] + 1.0)
            dw[i] = -w[i] * (ds[i] * iz[i] + 1.0)
        fp = min(_bound(x, dx), _bound(s, ds))
        fd = min(_bound(w, dw), _bound(z, dz))
        fp = min(step * fp, 1.0)
        fd = min(step * fd, 1.0)
        if min(fp, fd) < 1.0:
            mu = 0.0
            g = 0.0
            for i in range(m):
                mu += z[i] * x[i] + w[i] * s[i]
                g += (z[i] + fd * dz[i]) * (x[i] + fp * dx[i]) + (w[i] + fd * dw[i]) * (s[i] + fp * ds[i])
            mu = mu * (g / mu) ** 3 / (2.0 * m)
            for i in range(m):
                dxdz[i] = dx[i] * dz[i]
                dsdw[i] = ds[i] * dw[i]
                xi[i] = mu * (ix[i] - iz[i])
                tmp[i] = q[i] * (dxdz[i] * ix[i] - dsdw[i] * iz[i] - xi[i])
            _A_mul(A, tmp, corr)
            for a in range(k):
                rhs[a] += corr[a]
            _chol_solve(L, rhs, dy)
            _At_mul(A, dy, tmp)
            for i in range(m):
                dx[i] = q[i] * (tmp[i] + xi[i] - r[i] - dxdz[i] * ix[i] + dsdw[i] * iz[i])
                ds[i] = -dx[i]
                dz[i] = -z[i] + (mu - z[i] * dx[i] - dxdz[i]) * ix[i]
                dw[i] = -w[i] + (mu - w[i] * ds[i] - dsdw[i]) * iz[i]
            fp = min(_bound(x, dx), _bound(s, ds))
            fd = min(_bound(w, dw), _bound(z, dz))
            fp = min(step * fp, 1.0)
            fd = min(step * fd, 1.0)
        for i in range(m):
            x[i] += fp * dx[i]
            s[i] += fp * ds[i]
            w[i] += fd * dw[i]
            z[i] += fd * dz[i]
        for a in range(k):
            yd[a] += fd * dy[a]
        gap = 0.0
        for i in range(m):
            gap += c[i] * x[i] + w[i]
        for a in range(k):
            gap -= yd[a] * b[a]
    status = OK if gap <= gap_tol else MAX_ITER
    return -yd, it, gap, status


@nb.njit(cache=True)
def _basis_solve(A, yv, idx):
    k = A.shape[0]
    Xh = np.empty((k, k))
    yh = np.empty(k)
    for j in range(k):
        for a in range(k):
            Xh[j, a] = A[a, idx[j]]
        yh[j] = yv[idx[j]]
    bv, ok = lu_solve(Xh, yh)
    return Xh, bv, ok


@nb.njit(cache=True)
def _dual_multipliers(A, yv, tau, Xh, bv, idx, fit, mult, twin):
    """Solve X_h' v = -sum_{i not in h} psi_i x_i at the vertex through rows ``idx``.

    Nonbasic rows identical to a basic row (same response and design vector,
    as produced by resampling) are merged into that row's multiplier:
    ``twin[i]`` receives the basic slot row i duplicates (or -1) and ``mult``
    each slot's multiplicity, so slot j is optimal when
    mult_j (tau - 1) <= v_j <= mult_j tau.
    """
    k, m = A.shape
    _At_mul(A, bv, fit)
    inb = np.zeros(m, dtype=np.bool_)
    for j in range(k):
        inb[idx[j]] = True
        mult[j] = 1.0
    g = np.zeros(k)
    for i in range(m):
        twin[i] = -1
        if inb[i]:
            continue
        r = yv[i] - fit[i]
        if abs(r) <= 1e-9 * (1.0 + abs(yv[i])):
            for j in range(k):
                h = idx[j]
                if yv[i] != yv[h]:
                    continue
                same = True
                for a in range(k):
                    if A[a, i] != A[a, h]:
                        same = False
                        break
                if same:
                    twin[i] = j
                    break
            if twin[i] >= 0:
                mult[twin[i]] += 1.0
                continue
        psi = tau if r > 0.0 else tau - 1.0
        for a in range(k):
            g[a] += psi * A[a, i]
    return lu_solve(Xh.T.copy(), -g)


@nb.njit(cache=True)
def vertex_descent(A, yv, tau, idx, max_pivots):
    """Simplex pivots from the basic solution through rows ``idx`` to an optimal one.

    At each vertex the dual multipliers v are checked against [tau - 1, tau];
    the most violated row leaves the basis and an exact line search along that
    edge (a weighted median over residual crossings) picks the entering row.
    Returns (beta, idx, certified, pivots).
    """
    k, m = A.shape
    idx = idx.copy()
    fit = np.empty(m)
    d = np.empty(k)
    ej = np.empty(k)
    ad = np.empty(m)
    tbreak = np.empty(m)
    Xh, bv, ok = _basis_solve(A, yv, idx)
    if not ok:
        return bv, idx, False, 0
    tried = np.zeros(k, dtype=np.bool_)
    mult = np.empty(k)
    twin = np.empty(m, dtype=np.int64)
    piv = 0
    while piv <= max_pivots:
        v, ok2 = _dual_multipliers(A, yv, tau, Xh, bv, idx, fit, mult, twin)
        if not ok2:
            return bv, idx, False, piv
        # most violated multiplier not yet found degenerate at this vertex
        jbest = -1
        worst = 1e-9
        sigma = 0.0
        for j in range(k):
            if tried[j]:
                continue
            if v[j] - mult[j] * tau > worst:
                worst = v[j] - mult[j] * tau
                jbest = j
                sigma = -1.0
            elif mult[j] * (tau - 1.0) - v[j] > worst:
                worst = mult[j] * (tau - 1.0) - v[j]
                jbest = j
                sigma = 1.0
        if jbest < 0:
            cert = True
            for j in range(k):
                if tried[j]:
                    cert = False
            return bv, idx, cert, piv
        if piv == max_pivots:
            return bv, idx, False, piv
        for a in range(k):
            ej[a] = 0.0
        ej[jbest] = sigma
        dd, ok3 = lu_solve(Xh, ej)
        if not ok3:
            return bv, idx, False, piv
        for a in range(k):
            d[a] = dd[a]
        _At_mul(A, d, ad)
        inb = np.zeros(m, dtype=np.bool_)
        for j in range(k):
            inb[idx[j]] = True
        # slope at 0+ along beta + t d
        slope = (1.0 - tau) if sigma > 0 else tau
        nb_ = 0
        for i in range(m):
            if inb[i]:
                continue
            r = yv[i] - fit[i] if twin[i] < 0 else 0.0
            a_i = ad[i]
            if r > 0.0 or (r == 0.0 and a_i < 0.0):
                slope -= tau * a_i
            else:
                slope -= (tau - 1.0) * a_i
            if a_i != 0.0 and r != 0.0 and (r > 0.0) == (a_i > 0.0):
                tbreak[nb_] = r / a_i
                fit[nb_] = float(i)
                nb_ += 1
        if slope >= -1e-12 * (1.0 + abs(slope)) or nb_ == 0:
            tried[jbest] = True
            continue
        order = np.argsort(tbreak[:nb_])
        enter = -1
        for o in order:
            i = int(fit[o])
            slope += abs(ad[i])
            if slope >= 0.0:
                enter = i
                break
        if enter < 0:
            return bv, idx, False, piv
        idx[jbest] = enter
        Xh, bv, ok = _basis_solve(A, yv, idx)
        if not ok:
            return bv, idx, False, piv
        for j in range(k):
            tried[j] = False
        piv += 1
    return bv, idx, False, piv


@nb.njit(cache=True)
def _independent_rows(A, order, k):
    """First k rows in ``order`` whose design vectors are linearly independent.

    Greedy modified Gram-Schmidt; duplicated rows (as produced by resampling)
    are skipped. Returns fewer than k indices if the rows do not span.
    """
    Q = np.zeros((k, k))
    idx = np.empty(k, dtype=np.int64)
    v = np.empty(k)
    got = 0
    for i in order:
        nrm0 = 0.0
        for a in range(k):
            v[a] = A[a, i]
            nrm0 += v[a] * v[a]
        if nrm0 == 0.0:
            continue
        for j in range(got):
            dot = 0.0
            for a in range(k):
                dot += Q[j, a] * v[a]
            for a in range(k):
                v[a] -= dot * Q[j, a]
        nrm = 0.0
        for a in range(k):
            nrm += v[a] * v[a]
        if nrm <= 1e-18 * nrm0:
            continue
        nrm = np.sqrt(nrm)
        for a in range(k):
            Q[got, a] = v[a] / nrm
        idx[got] = i
        got += 1
        if got == k:
            break
    return idx[:got].copy()


@nb.njit(cache=True)
def polish(A, yv, tau, beta, m_real):
    """Snap an interior solution onto an optimal basic solution.

    Interpolates the k real rows with the smallest absolute residuals, then
    pivots until the dual-feasibility check passes. Returns
    (beta, accepted, certified); ``certified`` means the returned vertex is an
    exact minimiser.
    """
    k, m = A.shape
    if m_real < k:
        return beta, False, False
    fit = np.empty(m)
    _At_mul(A, beta, fit)
    absr = np.empty(m_real)
    for i in range(m_real):
        absr[i] = abs(yv[i] - fit[i])
    order = np.argsort(absr)
    idx = _independent_rows(A, order, k)
    if idx.size < k:
        return beta, False, False
    bv, idx2, cert, piv = vertex_descent(A, yv, tau, idx, 20 * k + 20)
    if not np.all(np.isfinite(bv)):
        return beta, False, False
    obj_ip = check_objective(A, yv, tau, beta)
    obj_v = check_objective(A, yv, tau, bv)
    if not obj_v <= obj_ip + 1e-12 * (1.0 + abs(obj_ip)):
        return beta, False, False
    return bv, True, cert


@nb.njit(cache=True)
def solve_full(A, yv, tau, beta0, warm, tol, max_iter, step, do_polish):
    """fnb + optional polish on a plain problem. Returns
    (beta, iterations, gap, status, certified)."""
    k, m = A.shape
    mu = 0.0
    for i in range(m):
        mu += yv[i]
    mu /= m
    scale = 1.0
    for i in range(m):
        scale += abs(yv[i] - mu)
    beta, it, gap, status = fnb(A, yv, tau, beta0, warm, tol * scale, max_iter, step)
    cert = False
    if do_polish and status != NUMERICAL:
        bp, acc, cert = polish(A, yv, tau, beta, m)
        if acc:
            beta = bp
            if cert:
                status = OK
    return beta, it, gap, status, cert


@nb.njit(cache=True)
def type1_quantile(v, p):
    n = v.size
    j = int(np.ceil(p * n)) - 1
    if j < 0:
        j = 0
    if j > n - 1:
        j = n - 1
    return np.partition(v.copy(), j)[j]


@nb.njit(cache=True)
def window_ranks(n, tau, M):
    """0-based ranks (first, last) of the M kept order statistics.

    The window starts at the type-1 (tau - M/(2n)) quantile and is shifted
    inward when it would run past either end of the sample.
    """
    first = int(np.ceil((tau - M / (2.0 * n)) * n)) - 1
    if first < 0:
        first = 0
    if first > n - M:
        first = n - M
    return first, first + M - 1


@nb.njit(cache=True)
def partition_labels(ratio, tau, M):
    """-1 for J_L, +1 for J_H, 0 for kept.

    J_L holds the rows strictly below the first kept order statistic and J_H
    those strictly above the last, so without ties exactly M rows are kept.
    """
    n = ratio.size
    lab = np.zeros(n, dtype=np.int8)
    if M >= n:
        return lab
    first, last = window_ranks(n, tau, M)
    w = np.partition(ratio, first)
    q_lo = w[first]
    if last == first:
        q_hi = q_lo
    else:
        rest = np.partition(w[first + 1:], last - first - 1)
        q_hi = rest[last - first - 1]
    for i in range(n):
        if ratio[i] < q_lo:
            lab[i] = -1
        elif ratio[i] > q_hi:
            lab[i] = 1
    return lab


@nb.njit(cache=True)
def _row_norm_mean(A):
    k, n = A.shape
    tot = 0.0
    for i in range(n):
        s = 0.0
        for a in range(k):
            s += A[a, i] * A[a, i]
        tot += np.sqrt(s)
    return tot / n


@nb.njit(cache=True)
def glob_offset(xg, yrange, mean_row_norm):
    nrm = 0.0
    for a in range(xg.size):
        nrm += xg[a] * xg[a]
    nrm = np.sqrt(nrm)
    return 1e3 * yrange * max(1.0, nrm / mean_row_norm)


@nb.njit(cache=True)
def solve_globbed_arrays(A, yv, lab, tau, beta_ref, warm_beta, tol, max_iter, step, yrange, mean_row_norm):
    """Build and solve the reduced problem for labels ``lab``.

    Returns (beta, iterations, status, certified, kept_count, glob_ok).
    ``glob_ok`` is False when a pseudo-row ended on the wrong side.
    """
    k, n = A.shape
    nk = 0
    nl = 0
    nh = 0
    for i in range(n):
        if lab[i] == 0:
            nk += 1
        elif lab[i] < 0:
            nl += 1
        else:
            nh += 1
    m = nk + (1 if nl > 0 else 0) + (1 if nh > 0 else 0)
    As = np.empty((k, m))
    ys = np.empty(m)
    xl = np.zeros(k)
    xh = np.zeros(k)
    j = 0
    mu = 0.0
    for i in range(n):
        if lab[i] == 0:
            for a in range(k):
                As[a, j] = A[a, i]
            ys[j] = yv[i]
            mu += yv[i]
            j += 1
        elif lab[i] < 0:
            for a in range(k):
                xl[a] += A[a, i]
        else:
            for a in range(k):
                xh[a] += A[a, i]
    scale = 1.0
    if nk > 0:
        mu /= nk
        for i in range(nk):
            scale += abs(ys[i] - mu)
    if nl > 0:
        cl = glob_offset(xl, yrange, mean_row_norm)
        f = 0.0
        for a in range(k):
            As[a, j] = xl[a]
            f += xl[a] * beta_ref[a]
        ys[j] = f - cl
        j += 1
    if nh > 0:
        ch = glob_offset(xh, yrange, mean_row_norm)
        f = 0.0
        for a in range(k):
            As[a, j] = xh[a]
            f += xh[a] * beta_ref[a]
        ys[j] = f + ch
        j += 1
    beta, it, gap, status = fnb(As, ys, tau, warm_beta, True, tol * scale, max_iter, step)
    cert = False
    if status != NUMERICAL:
        bp, acc, cert = polish(As, ys, tau, beta, nk)
        if acc:
            beta = bp
            if cert:
                status = OK
    glob_ok = True
    j = nk
    if nl > 0:
        f = 0.0
        for a in range(k):
            f += As[a, j] * beta[a]
        if not ys[j] - f < 0.0:
            glob_ok = False
        j += 1
    if nh > 0:
        f = 0.0
        for a in range(k):
            f += As[a, j] * beta[a]
        if not ys[j] - f > 0.0:
            glob_ok = False
    return beta, it, status, cert, nk, glob_ok


@nb.njit(cache=True)
def preprocess_solve(A, yv, z, tau, prelim, m_mult, size_base, allowed_bad, max_rounds,
                     restart_mode, tol, max_iter, step):
    """Sign-guessing reduced solve with fix-ups (one quantile index).

    restart_mode 0 doubles ``m`` internally on too many bad signs;
    restart_mode 1 returns RESTART so the caller can draw a new prelim.

    Returns (beta, status, rounds, fixups, restarts, kept, iterations,
    certified, used_full).
    """
    k, n = A.shape
    ymin = yv.min()
    ymax = yv.max()
    yrange = ymax - ymin
    if yrange <= 0.0:
        yrange = 1.0
    mrn = _row_norm_mean(A)
    if mrn <= 0.0:
        mrn = 1.0
    fit = np.empty(n)
    ratio = np.empty(n)
    _At_mul(A, prelim, fit)
    for i in range(n):
        ratio[i] = (yv[i] - fit[i]) / z[i]
    rounds = 0
    fixups = 0
    restarts = 0
    iters = 0
    m_cur = m_mult
    beta = prelim.copy()
    while True:
        M = int(np.round(m_cur * size_base))
        if M >= n - 2:
            b, it, gap, st, cert = solve_full(A, yv, tau, prelim, True, tol, max_iter, step, True)
            return b, st, rounds, fixups, restarts, n, iters + it, cert, True
        lab = partition_labels(ratio, tau, M)
        warm = prelim.copy()
        while True:
            if rounds >= max_rounds:
                b, it, gap, st, cert = solve_full(A, yv, tau, prelim, True, tol, max_iter, step, True)
                return b, st, rounds, max_rounds, restarts, n, iters + it, cert, True
            rounds += 1
            beta, it, st, cert, nk, glob_ok = solve_globbed_arrays(
                A, yv, lab, tau, prelim, warm, tol, max_iter, step, yrange, mrn)
            iters += it
            if st == NUMERICAL:
                b, it, gap, st2, cert2 = solve_full(A, yv, tau, prelim, True, tol, max_iter, step, True)
                return b, st2, rounds, max_rounds, restarts, n, iters + it, cert2, True
            _At_mul(A, beta, fit)
            bad = 0
            for i in range(n):
                ri = yv[i] - fit[i]
                if lab[i] < 0 and ri >= 0.0:
                    bad += 1
                elif lab[i] > 0 and ri <= 0.0:
                    bad += 1
            if glob_ok and bad <= allowed_bad:
                return beta, st, rounds, fixups, restarts, nk, iters, cert, False
            # an interpolated pseudo-row means the globs cannot be balanced by
            # the kept rows: the partition is wrong, not the offset
            if glob_ok and bad < 0.1 * M:
                for i in range(n):
                    ri = yv[i] - fit[i]
                    if lab[i] < 0 and ri >= 0.0:
                        lab[i] = 0
                    elif lab[i] > 0 and ri <= 0.0:
                        lab[i] = 0
                fixups += 1
                warm = beta.copy()
                continue
            restarts += 1
            if restart_mode == 1:
                return beta, RESTART, rounds, fixups, restarts, nk, iters, cert, False
            m_cur *= 2.0
            break


@nb.njit(cache=True)
def preprocess_chain(A, yv, z, taus, prelim0, solve_first, m_mult, size_base, allowed_bad,
                     max_rounds, tol, max_iter, step):
    """Chain reduced solves along an increasing grid, each seeded by the last.

    When ``solve_first`` is False, ``prelim0`` is taken as the fit at
    ``taus[0]``. Returns per-index arrays (betas, status, rounds, fixups,
    kept, iterations, used_full).
    """
    k = A.shape[0]
    J = taus.size
    betas = np.empty((J, k))
    status = np.zeros(J, dtype=np.int64)
    rounds = np.zeros(J, dtype=np.int64)
    fixups = np.zeros(J, dtype=np.int64)
    kept = np.zeros(J, dtype=np.int64)
    iters = np.zeros(J, dtype=np.int64)
    full = np.zeros(J, dtype=np.bool_)
    prev = prelim0.copy()
    for j in range(J):
        if j == 0 and not solve_first:
            betas[0] = prelim0
            kept[0] = A.shape[1]
            continue
        b, st, rd, fx, rs, nk, it, cert, uf = preprocess_solve(
            A, yv, z, taus[j], prev, m_mult, size_base, allowed_bad, max_rounds, 0, tol, max_iter, step)
        betas[j] = b
        status[j] = st
        rounds[j] = rd
        fixups[j] = fx
        kept[j] = nk
        iters[j] = it
        full[j] = uf
        prev = b
    return betas, status, rounds, fixups, kept, iters, full


@nb.njit(cache=True)
def residual_scale_arrays(A, xtx_inv_n):
    """sqrt(x_i' (X'X/n)^{-1} x_i) for every row."""
    k, n = A.shape
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for a in range(k):
            t = 0.0
            for b in range(k):
                t += xtx_inv_n[a, b] * A[b, i]
            s += A[a, i] * t
        out[i] = np.sqrt(s) if s > 0.0 else 0.0
    return out


# phi(u) / phi(0) < 1e-16 beyond this, so such rows cannot change J in double precision
KERNEL_CUTOFF = 8.6
# dense products go through BLAS from this many columns on
BLAS_MIN_K = 6


@nb.njit(cache=True, fastmath=True)
def powell_gram(A, resid, h):
    """(1/(n h)) sum phi(r_i/h) x_i x_i'."""
    k, n = A.shape
    c = 1.0 / np.sqrt(2.0 * np.pi)
    active = np.empty(n, dtype=np.int64)
    na = 0
    for i in range(n):
        if abs(resid[i]) < KERNEL_CUTOFF * h:
            active[na] = i
            na += 1
    B = np.empty((k, na))
    q = np.empty(na)
    for t in range(na):
        u = resid[active[t]] / h
        q[t] = c * np.exp(-0.5 * u * u)
    for a in range(k):
        Aa = A[a]
        Ba = B[a]
        for t in range(na):
            Ba[t] = Aa[active[t]]
    if k >= BLAS_MIN_K:
        for t in range(na):
            q[t] = np.sqrt(q[t])
        for a in range(k):
            Ba = B[a]
            for t in range(na):
                Ba[t] *= q[t]
        G = B @ B.T
    else:
        G = np.empty((k, k))
        _gram(B, q, G)
    G /= n * h
    return G


@nb.njit(cache=True, fastmath=True)
def moment_arrays(A, yv, tau, beta):
    """(1/n) sum (tau - 1(y_i <= x_i'beta)) x_i."""
    k, n = A.shape
    fit = np.empty(n)
    _At_mul(A, beta, fit)
    wts = np.empty(n)
    for i in range(n):
        wts[i] = tau - (1.0 if yv[i] <= fit[i] else 0.0)
    out = np.empty(k)
    _A_mul(A, wts, out)
    out /= n
    return out


@nb.njit(cache=True)
def _interp7(w0, w1, pos):
    lo = np.floor(pos)
    return w0 + (pos - lo) * (w1 - w0)


@nb.njit(cache=True)
def quartiles(v):
    """Lower and upper quartiles with numpy's default (linear) interpolation.

    Large inputs are handled by selection inside brackets taken from a sorted
    strided sample; if a bracket misses its target the full sort is used, so
    the result is always exact.
    """
    n = v.size
    p0 = 0.25 * (n - 1)
    p1 = 0.75 * (n - 1)
    k0 = int(np.floor(p0))
    k1 = int(np.floor(p1))
    j0 = min(k0 + 1, n - 1)
    j1 = min(k1 + 1, n - 1)
    if n <= 8192:
        w = np.sort(v)
        return _interp7(w[k0], w[j0], p0), _interp7(w[k1], w[j1], p1)
    step = n // 4096
    smp = np.sort(v[::step])
    m = smp.size
    margin = 3.0 * np.sqrt(m * 0.1875) + 2.0
    lo0 = smp[max(int((k0 + 0.5) / n * m - margin), 0)]
    hi0 = smp[min(int((j0 + 0.5) / n * m + margin) + 1, m - 1)]
    lo1 = smp[max(int((k1 + 0.5) / n * m - margin), 0)]
    hi1 = smp[min(int((j1 + 0.5) / n * m + margin) + 1, m - 1)]
    b0 = 0
    c0 = 0
    b1 = 0
    c1 = 0
    for i in range(n):
        x = v[i]
        if x < lo0:
            b0 += 1
        elif x <= hi0:
            c0 += 1
        if x < lo1:
            b1 += 1
        elif x <= hi1:
            c1 += 1
    if not (b0 <= k0 and j0 < b0 + c0 and b1 <= k1 and j1 < b1 + c1):
        w = np.sort(v)
        return _interp7(w[k0], w[j0], p0), _interp7(w[k1], w[j1], p1)
    buf0 = np.empty(c0)
    buf1 = np.empty(c1)
    c0 = 0
    c1 = 0
    for i in range(n):
        x = v[i]
        if lo0 <= x <= hi0:
            buf0[c0] = x
            c0 += 1
        if lo1 <= x <= hi1:
            buf1[c1] = x
            c1 += 1
    buf0.sort()
    buf1.sort()
    return (_interp7(buf0[k0 - b0], buf0[j0 - b0], p0), _interp7(buf1[k1 - b1], buf1[j1 - b1], p1))


@nb.njit(cache=True)
def residual_spread(r):
    """min(sd, IQR/1.34) of the residuals; falls back to whichever is positive."""
    n = r.size
    mu = 0.0
    for i in range(n):
        mu += r[i]
    mu /= n
    ss = 0.0
    for i in range(n):
        ss += (r[i] - mu) ** 2
    sd = np.sqrt(ss / max(n - 1, 1))
    q1, q3 = quartiles(r)
    iqr = (q3 - q1) / 1.34
    if iqr > 0.0 and sd > 0.0:
        return min(sd, iqr)
    return max(sd, iqr)


@nb.njit(cache=True)
def _residuals(A, yv, beta, r):
    _At_mul(A, beta, r)
    for i in range(r.size):
        r[i] = yv[i] - r[i]


@nb.njit(cache=True)
def _sign_moment(A, r, tau, out):
    k, n = A.shape
    wts = np.empty(n)
    for i in range(n):
        wts[i] = tau - (1.0 if r[i] <= 0.0 else 0.0)
    _A_mul(A, wts, out)
    out /= n


@nb.njit(cache=True)
def jacobian_at(A, yv, beta, hq):
    """Powell Jacobian at ``beta`` with bandwidth ``hq`` times the residual spread.

    Returns (J, h, residuals)."""
    n = yv.size
    r = np.empty(n)
    _residuals(A, yv, beta, r)
    kappa = residual_spread(r)
    h = hq * kappa if kappa > 0.0 else hq
    return powell_gram(A, r, h), h, r


# one-step march status codes
ONESTEP_OK = 0
ONESTEP_SINGULAR = 1
ONESTEP_NONFINITE = 2


@nb.njit(cache=True)
def _check_sum(r, tau):
    s = 0.0
    for i in range(r.size):
        s += r[i] * (tau - (1.0 if r[i] <= 0.0 else 0.0))
    return s


@nb.njit(cache=True)
def fit_stats(A, yv, tau, beta):
    """(objective, moment sup-norm) from one pass over the residuals."""
    k, n = A.shape
    r = np.empty(n)
    _residuals(A, yv, beta, r)
    M = np.empty(k)
    _sign_moment(A, r, tau, M)
    return _check_sum(r, tau), np.abs(M).max()


@nb.njit(cache=True)
def onestep_march(A, yv, taus, start, beta_start, hq, eig_rtol, ridge, col_scale):
    """Newton updates outward from grid index ``start``.

    Upward pass then downward pass; each step uses the Jacobian at the
    previous grid point and the moment at the next one. Returns
    (betas, objectives, moment_norms, scaled_moments, min_eigs, bandwidths,
    status, fail_index), where scaled_moments is max_a |M_a| / col_scale[a].
    A failing pass stops; its remaining rows stay NaN.
    """
    k, n = A.shape
    J = taus.size
    betas = np.full((J, k), np.nan)
    objs = np.full(J, np.nan)
    moms = np.full(J, np.nan)
    smom = np.full(J, np.nan)
    min_eigs = np.full(J, np.nan)
    hs = np.full(J, np.nan)
    xbar = np.empty(k)
    _A_mul(A, np.ones(n), xbar)
    xbar /= n
    for a in range(k):
        betas[start, a] = beta_start[a]
    status = ONESTEP_OK
    fail = -1
    M = np.empty(k)
    for direction in (1, -1):
        j = start
        b = beta_start.copy()
        while True:
            jn = j + direction
            if not 0 <= jn < J:
                if direction == 1 or j != start:
                    r = np.empty(n)
                    _residuals(A, yv, b, r)
                    objs[j] = _check_sum(r, taus[j])
                    _sign_moment(A, r, taus[j], M)
                    moms[j] = 0.0
                    smom[j] = 0.0
                    for a in range(k):
                        moms[j] = max(moms[j], abs(M[a]))
                        smom[j] = max(smom[j], abs(M[a]) / col_scale[a])
                break
            Jm, h, r = jacobian_at(A, yv, b, hq[j])
            hs[j] = h
            objs[j] = _check_sum(r, taus[j])
            _sign_moment(A, r, taus[jn], M)
            mj = 0.0
            sj = 0.0
            for a in range(k):
                ma = abs(M[a] - (taus[jn] - taus[j]) * xbar[a])
                mj = max(mj, ma)
                sj = max(sj, ma / col_scale[a])
            moms[j] = mj
            smom[j] = sj
            tr = 0.0
            for a in range(k):
                tr += Jm[a, a]
            ev = np.linalg.eigvalsh(Jm)
            min_eigs[j] = ev[0]
            if ridge > 0.0:
                for a in range(k):
                    Jm[a, a] += ridge * taus[j] * tr / k
            elif not ev[0] > eig_rtol * tr / k:
                if status == ONESTEP_OK:
                    status = ONESTEP_SINGULAR
                    fail = j
                break
            step = np.linalg.solve(Jm, M)
            ok = True
            for a in range(k):
                b[a] += step[a]
                if not np.isfinite(b[a]):
                    ok = False
            if not ok:
                if status == ONESTEP_OK:
                    status = ONESTEP_NONFINITE
                    fail = jn
                break
            for a in range(k):
                betas[jn, a] = b[a]
            j = jn
    return betas, objs, moms, smom, min_eigs, hs, status, fail


@nb.njit(cache=True)
def process_jacobians(A, yv, betas, hq):
    """Powell Jacobians at every grid point of a fitted process."""
    J, k = betas.shape
    out = np.empty((J, k, k))
    hs = np.empty(J)
    for j in range(J):
        Jm, h, r = jacobian_at(A, yv, betas[j].copy(), hq[j])
        out[j] = Jm
        hs[j] = h
    return out, hs
