"""Hot numerical kernels, each in a numba flavour and a pure-numpy flavour.

Every sample handed to a kernel is in "stratum-contiguous" layout: a flat
per-unit array plus ``offsets`` (length I+1) such that stratum ``i`` occupies
``offsets[i]:offsets[i+1]``.  The public names at the bottom of the module
dispatch on :data:`aberrant._accel.USE_NUMBA`; the ``*_nb`` / ``*_np`` names
stay importable so tests and the benchmark can compare both.
"""
import types

import numpy as np

from . import _accel
from ._accel import njit

TIE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# segment helpers

@njit
def seg_sum_nb(x, offsets):
    n_seg = offsets.size - 1
    out = np.empty(n_seg)
    for i in range(n_seg):
        acc = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            acc += x[j]
        out[i] = acc
    return out


def seg_sum_np(x, offsets):
    return np.add.reduceat(x, offsets[:-1])


@njit
def seg_expand_nb(v, offsets):
    out = np.empty(offsets[-1])
    for i in range(offsets.size - 1):
        for j in range(offsets[i], offsets[i + 1]):
            out[j] = v[i]
    return out


def seg_expand_np(v, offsets):
    return np.repeat(v, np.diff(offsets))


# ---------------------------------------------------------------------------
# separability moments: per stratum, the largest attainable expectation of the
# treated score and the largest variance among the maximisers

@njit
def sep_moments_nb(q, offsets, gamma):
    n_seg = offsets.size - 1
    mu = np.empty(n_seg)
    nu = np.empty(n_seg)
    for i in range(n_seg):
        lo = offsets[i]
        n = offsets[i + 1] - lo
        x = np.sort(q[lo:lo + n])
        tot1 = 0.0
        tot2 = 0.0
        big = 0.0
        for j in range(n):
            tot1 += x[j]
            tot2 += x[j] * x[j]
            if abs(x[j]) > big:
                big = abs(x[j])
        mus = np.empty(n - 1)
        nus = np.empty(n - 1)
        c1 = 0.0
        c2 = 0.0
        for b in range(1, n):
            c1 += x[b - 1]
            c2 += x[b - 1] * x[b - 1]
            d = b + gamma * (n - b)
            m = (c1 + gamma * (tot1 - c1)) / d
            mus[b - 1] = m
            nus[b - 1] = (c2 + gamma * (tot2 - c2)) / d - m * m
        mmax = mus.max()
        tol = TIE_RTOL * max(abs(mmax), big)
        best = -np.inf
        for b in range(n - 1):
            if mus[b] >= mmax - tol and nus[b] > best:
                best = nus[b]
        mu[i] = mmax
        nu[i] = max(best, 0.0)
    return mu, nu


def _sorted_positions(q, offsets):
    sizes = np.diff(offsets)
    sid = np.repeat(np.arange(sizes.size), sizes)
    order = np.lexsort((q, sid))
    pos = np.arange(q.size) - offsets[:-1][sid]
    return sid, order, pos, sizes


def _seg_cumsum(x, offsets, sid):
    c = np.cumsum(x)
    base = np.concatenate(([0.0], c))[offsets[:-1]]
    return c - base[sid]


def sep_moments_np(q, offsets, gamma):
    sid, order, pos, sizes = _sorted_positions(q, offsets)
    x = q[order]
    starts = offsets[:-1]
    c1 = _seg_cumsum(x, offsets, sid)
    c2 = _seg_cumsum(x * x, offsets, sid)
    tot1 = np.add.reduceat(x, starts)[sid]
    tot2 = np.add.reduceat(x * x, starts)[sid]
    n = sizes[sid]
    b = pos + 1
    d = b + gamma * (n - b)
    m = (c1 + gamma * (tot1 - c1)) / d
    v = (c2 + gamma * (tot2 - c2)) / d - m * m
    valid = b < n
    m = np.where(valid, m, -np.inf)
    mmax = np.maximum.reduceat(m, starts)
    big = np.maximum.reduceat(np.abs(x), starts)
    tol = TIE_RTOL * np.maximum(np.abs(mmax), big)
    tie = valid & (m >= (mmax - tol)[sid])
    nu = np.maximum.reduceat(np.where(tie, v, -np.inf), starts)
    return mmax, np.maximum(nu, 0.0)


# ---------------------------------------------------------------------------
# linear maximisation over the product of per-stratum probability polytopes
# {p = w / sum(w) : w in [1, gamma]^n}; the optimum is a vertex where the
# largest entries of c get weight gamma.

@njit
def vertex_argmax_nb(c, offsets, gamma):
    n_seg = offsets.size - 1
    val = np.empty(n_seg)
    p = np.empty(c.size)
    for i in range(n_seg):
        lo = offsets[i]
        n = offsets[i + 1] - lo
        order = np.argsort(c[lo:lo + n])
        tot = 0.0
        for j in range(n):
            tot += c[lo + j]
        best = tot / n
        best_b = n
        acc = 0.0
        for b in range(1, n):
            acc += c[lo + order[b - 1]]
            m = (acc + gamma * (tot - acc)) / (b + gamma * (n - b))
            if m > best:
                best = m
                best_b = b
        val[i] = best
        d = best_b + gamma * (n - best_b)
        for r in range(n):
            p[lo + order[r]] = (1.0 if r < best_b else gamma) / d
    return val, p


def vertex_argmax_np(c, offsets, gamma):
    sid, order, pos, sizes = _sorted_positions(c, offsets)
    x = c[order]
    starts = offsets[:-1]
    cs = _seg_cumsum(x, offsets, sid)
    tot = np.add.reduceat(x, starts)[sid]
    n = sizes[sid]
    b = pos + 1
    cut = b < n
    # the last position stands for the uniform point; it wins ties, as in the loop version
    m = np.where(cut, (cs + gamma * (tot - cs)) / (b + gamma * (n - b)), tot / n)
    best = np.maximum.reduceat(m, starts)
    key = np.where(cut, b, 0)
    big = np.iinfo(np.int64).max
    best_b = np.minimum.reduceat(np.where(m >= best[sid], key, big), starts)
    best_b = np.where(best_b == 0, sizes, best_b)
    bb = best_b[sid]
    d = bb + gamma * (n - bb)
    p = np.empty_like(c)
    p[order] = np.where(pos < bb, 1.0, gamma) / d
    return best, p


# ---------------------------------------------------------------------------
# correlation of two sum statistics as a function of the box weights w

@njit
def rho_grad_nb(w, q1, q2, offsets):
    n_seg = offsets.size - 1
    N = w.size
    p = np.empty(N)
    W = np.empty(n_seg)
    m1 = np.empty(n_seg)
    m2 = np.empty(n_seg)
    C = 0.0
    V1 = 0.0
    V2 = 0.0
    for i in range(n_seg):
        tot = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            tot += w[j]
        W[i] = tot
        a1 = 0.0
        a2 = 0.0
        s12 = 0.0
        s11 = 0.0
        s22 = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            pj = w[j] / tot
            p[j] = pj
            a1 += pj * q1[j]
            a2 += pj * q2[j]
            s12 += pj * q1[j] * q2[j]
            s11 += pj * q1[j] * q1[j]
            s22 += pj * q2[j] * q2[j]
        m1[i] = a1
        m2[i] = a2
        C += s12 - a1 * a2
        V1 += s11 - a1 * a1
        V2 += s22 - a2 * a2
    grad = np.empty(N)
    if V1 <= 0.0 or V2 <= 0.0:
        grad[:] = np.nan
        return np.nan, grad
    sd = np.sqrt(V1 * V2)
    rho = C / sd
    for i in range(n_seg):
        gbar = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            dC = q1[j] * q2[j] - m2[i] * q1[j] - m1[i] * q2[j]
            dV1 = q1[j] * q1[j] - 2.0 * m1[i] * q1[j]
            dV2 = q2[j] * q2[j] - 2.0 * m2[i] * q2[j]
            g = dC / sd - 0.5 * rho * (dV1 / V1 + dV2 / V2)
            grad[j] = g
            gbar += p[j] * g
        for j in range(offsets[i], offsets[i + 1]):
            grad[j] = (grad[j] - gbar) / W[i]
    return rho, grad


def rho_grad_np(w, q1, q2, offsets):
    W = np.add.reduceat(w, offsets[:-1])
    sizes = np.diff(offsets)
    Wu = np.repeat(W, sizes)
    p = w / Wu
    m1 = np.add.reduceat(p * q1, offsets[:-1])
    m2 = np.add.reduceat(p * q2, offsets[:-1])
    C = np.sum(p * q1 * q2) - np.sum(m1 * m2)
    V1 = np.sum(p * q1 * q1) - np.sum(m1 * m1)
    V2 = np.sum(p * q2 * q2) - np.sum(m2 * m2)
    if V1 <= 0.0 or V2 <= 0.0:
        return np.nan, np.full(w.size, np.nan)
    sd = np.sqrt(V1 * V2)
    rho = C / sd
    m1u = np.repeat(m1, sizes)
    m2u = np.repeat(m2, sizes)
    dC = q1 * q2 - m2u * q1 - m1u * q2
    dV1 = q1 * q1 - 2.0 * m1u * q1
    dV2 = q2 * q2 - 2.0 * m2u * q2
    g = dC / sd - 0.5 * rho * (dV1 / V1 + dV2 / V2)
    gbar = np.add.reduceat(p * g, offsets[:-1])
    return rho, (g - np.repeat(gbar, sizes)) / Wu


# ---------------------------------------------------------------------------
# design sensitivity: per-stratum max over b of the Gamma-weighted mean of
# ascending G values

@njit
def phi_rows_nb(G_sorted, gamma):
    n, m = G_sorted.shape
    out = np.empty(n)
    for r in range(n):
        tot = 0.0
        for j in range(m):
            tot += G_sorted[r, j]
        acc = 0.0
        best = -np.inf
        for b in range(1, m):
            acc += G_sorted[r, b - 1]
            v = (acc + gamma * (tot - acc)) / (b + gamma * (m - b))
            if v > best:
                best = v
        out[r] = best
    return out


def phi_rows_np(G_sorted, gamma):
    n, m = G_sorted.shape
    cs = np.cumsum(G_sorted, axis=1)[:, :-1]
    tot = G_sorted.sum(axis=1)[:, None]
    b = np.arange(1, m)
    vals = (cs + gamma * (tot - cs)) / (b + gamma * (m - b))
    return vals.max(axis=1)


# ---------------------------------------------------------------------------
# block solves for the interior-point method.  Stratum i has unknowns
# (p_i, s_i); its Hessian block is
#   D_pp = diag(wg + wh) + A_1 q_1 q_1' + A_2 q_2 q_2'
#   D_ps = -wg - gamma wh,   D_ss = sum(wg + gamma^2 wh)
# where wg, wh weight the constraints p - s >= 0 and gamma s - p >= 0, bordered
# by the constraint sum(dp) = 0.  Every column of (Rp, Rs) is a right-hand side.

@njit
def block_solve_nb(wg, wh, A, Qm, offsets, gamma, Rp, Rs):
    n_seg = offsets.size - 1
    K = Rp.shape[1]
    Xp = np.empty_like(Rp)
    Xs = np.empty_like(Rs)
    for i in range(n_seg):
        lo = offsets[i]
        n = offsets[i + 1] - lo
        sz = n + 2
        M = np.zeros((sz, sz))
        B = np.zeros((sz, K))
        dss = 0.0
        for a in range(n):
            ig = wg[lo + a]
            ih = wh[lo + a]
            M[a, a] += ig + ih
            M[a, n] = -ig - gamma * ih
            M[n, a] = M[a, n]
            dss += ig + gamma * gamma * ih
            M[a, n + 1] = 1.0
            M[n + 1, a] = 1.0
            for k in range(2):
                if A[k] != 0.0:
                    qa = Qm[k, lo + a]
                    for b in range(n):
                        M[a, b] += A[k] * qa * Qm[k, lo + b]
            for c in range(K):
                B[a, c] = Rp[lo + a, c]
        M[n, n] = dss
        for c in range(K):
            B[n, c] = Rs[i, c]
        # Gaussian elimination with partial pivoting
        for col in range(sz):
            piv = col
            big = abs(M[col, col])
            for r in range(col + 1, sz):
                if abs(M[r, col]) > big:
                    big = abs(M[r, col])
                    piv = r
            if piv != col:
                for cc in range(sz):
                    tmp = M[col, cc]
                    M[col, cc] = M[piv, cc]
                    M[piv, cc] = tmp
                for cc in range(K):
                    tmp = B[col, cc]
                    B[col, cc] = B[piv, cc]
                    B[piv, cc] = tmp
            d = M[col, col]
            for r in range(col + 1, sz):
                f = M[r, col] / d
                if f != 0.0:
                    for cc in range(col, sz):
                        M[r, cc] -= f * M[col, cc]
                    for cc in range(K):
                        B[r, cc] -= f * B[col, cc]
        for r in range(sz - 1, -1, -1):
            for cc in range(K):
                acc = B[r, cc]
                for c2 in range(r + 1, sz):
                    acc -= M[r, c2] * B[c2, cc]
                B[r, cc] = acc / M[r, r]
        for a in range(n):
            for c in range(K):
                Xp[lo + a, c] = B[a, c]
        for c in range(K):
            Xs[i, c] = B[n, c]
    return Xp, Xs


def block_solve_np(wg, wh, A, Qm, offsets, gamma, Rp, Rs):
    sizes = np.diff(offsets)
    K = Rp.shape[1]
    Xp = np.empty_like(Rp)
    Xs = np.empty_like(Rs)
    for n in np.unique(sizes):
        strata = np.flatnonzero(sizes == n)
        idx = offsets[strata][:, None] + np.arange(n)
        ig = wg[idx]
        ih = wh[idx]
        G = strata.size
        M = np.zeros((G, n + 2, n + 2))
        ar = np.arange(n)
        M[:, ar, ar] = ig + ih
        for k in range(2):
            if A[k] != 0.0:
                qk = Qm[k][idx]
                M[:, :n, :n] += A[k] * qk[:, :, None] * qk[:, None, :]
        M[:, ar, n] = -ig - gamma * ih
        M[:, n, ar] = M[:, ar, n]
        M[:, n, n] = np.sum(ig + gamma * gamma * ih, axis=1)
        M[:, ar, n + 1] = 1.0
        M[:, n + 1, ar] = 1.0
        B = np.zeros((G, n + 2, K))
        B[:, :n, :] = Rp[idx]
        B[:, n, :] = Rs[strata]
        try:
            X = np.linalg.solve(M, B)
        except np.linalg.LinAlgError:
            X = np.full(B.shape, np.nan)
        Xp[idx] = X[:, :n, :]
        Xs[strata] = X[:, n, :]
    return Xp, Xs


# ---------------------------------------------------------------------------
# max-min of two affine functions over the product polytope (an LP), solved
# through its one-dimensional Lagrangian dual with the vertex oracle

def _maxmin_affine(a, Cm, offsets, gamma, iters):
    # maximise min_k (a[k] + Cm[k] . p); returns (value, p)
    p1 = _vertex_argmax_k(Cm[0], offsets, gamma)[1]
    e0 = a[0] + np.dot(Cm[0], p1)
    e1 = a[1] + np.dot(Cm[1], p1)
    if e0 <= e1:
        return e0, p1
    p0 = _vertex_argmax_k(Cm[1], offsets, gamma)[1]
    e0 = a[0] + np.dot(Cm[0], p0)
    e1 = a[1] + np.dot(Cm[1], p0)
    if e1 <= e0:
        return e1, p0
    lo = 0.0
    hi = 1.0
    p_lo = p0
    p_hi = p1
    sub_lo = e0 - e1
    sub_hi = (a[0] + np.dot(Cm[0], p1)) - (a[1] + np.dot(Cm[1], p1))
    for _ in range(iters):
        lam = 0.5 * (lo + hi)
        pm = _vertex_argmax_k(lam * Cm[0] + (1.0 - lam) * Cm[1], offsets, gamma)[1]
        sub = (a[0] + np.dot(Cm[0], pm)) - (a[1] + np.dot(Cm[1], pm))
        if sub > 0.0:
            hi = lam
            p_hi = pm
            sub_hi = sub
        else:
            lo = lam
            p_lo = pm
            sub_lo = sub
    theta = sub_hi / (sub_hi - sub_lo)
    p = theta * p_lo + (1.0 - theta) * p_hi
    v = min(a[0] + np.dot(Cm[0], p), a[1] + np.dot(Cm[1], p))
    return v, p


# ---------------------------------------------------------------------------
# primal-dual interior-point solver for the second-stage programs
#
#   minimise   y
#   subject to y >= F_k(p)                            (k active)
#              sgn[k] * (t_k - q_k . p) >= 0          (k = 0, 1; optional)
#              s_i <= p_ij <= gamma s_i,  sum_j p_ij = 1
#
# Two forms of F_k are supported, both convex in p:
#   form 0 ("cell"):   wts[k] * ((t_k - mu_k)^2 - Q^2 V_k)
#   form 1 ("margin"): wts[k] * (t_k - mu_k - Q sqrt(V_k))
# The epigraph slacks r_k are variables of their own, so y - F_k(p) = r_k is only
# reached in the limit (the usual infeasible-start treatment of nonlinear
# constraints).  The Newton system is block diagonal per stratum plus a
# low-rank global term, solved with the Woodbury identity after eliminating y.
# Every iterate stays inside the polytope, so the best objective seen is an
# upper bound; a lower bound comes from linearising the dual-weighted
# Lagrangian and minimising it exactly over the polytope with the vertex oracle.

STATUS_CONVERGED = 0
STATUS_NEGATIVE = 1
STATUS_POSITIVE = 2
STATUS_MAXITER = 3
STATUS_FAILED = 4
STATUS_STALLED = 5

FORM_CELL = 0
FORM_MARGIN = 1

VAR_FLOOR = 1e-12
STEP_FRACTION = 0.995
STALL_RTOL = 1e-13


def _pd_evaluate(form, p, Qm, offsets, t, Q, wts):
    # per statistic: value, gradient, per-stratum Hessian coefficient on
    # q q', and a global rank-one Hessian term cu * U U'
    N = p.size
    F = np.empty(2)
    A = np.empty(2)
    cu = np.empty(2)
    dF = np.empty((2, N))
    U = np.empty((2, N))
    for k in range(2):
        mseg = _seg_sum_k(p * Qm[k], offsets)
        mu = mseg.sum()
        V = np.sum(p * Qm[k] * Qm[k]) - np.sum(mseg * mseg)
        dV = Qm[k] * Qm[k] - 2.0 * _seg_expand_k(mseg, offsets) * Qm[k]
        w = wts[k]
        if form == FORM_CELL:
            F[k] = w * ((t[k] - mu) ** 2 - Q * Q * max(V, VAR_FLOOR))
            dF[k] = w * (-2.0 * (t[k] - mu) * Qm[k] - Q * Q * dV)
            A[k] = 2.0 * w * Q * Q
            U[k] = Qm[k]
            cu[k] = 2.0 * w
        else:
            sd = np.sqrt(max(V, VAR_FLOOR))
            F[k] = w * (t[k] - mu - Q * sd)
            dF[k] = w * (-Qm[k] - Q * dV / (2.0 * sd))
            A[k] = w * Q / sd
            U[k] = dV
            cu[k] = w * Q / (4.0 * sd * sd * sd)
    return F, dF, A, U, cu

def _small_solve(M, B):
    # Gaussian elimination with partial pivoting; ok=False if singular
    n = M.shape[0]
    M = M.copy()
    B = B.copy()
    for col in range(n):
        piv = col
        for r in range(col + 1, n):
            if abs(M[r, col]) > abs(M[piv, col]):
                piv = r
        if not abs(M[piv, col]) > 0.0 or not np.isfinite(M[piv, col]):
            return B, False
        for cc in range(n):
            tmp = M[col, cc]
            M[col, cc] = M[piv, cc]
            M[piv, cc] = tmp
        for cc in range(B.shape[1]):
            tmp = B[col, cc]
            B[col, cc] = B[piv, cc]
            B[piv, cc] = tmp
        for r in range(col + 1, n):
            f = M[r, col] / M[col, col]
            for cc in range(col, n):
                M[r, cc] -= f * M[col, cc]
            for cc in range(B.shape[1]):
                B[r, cc] -= f * B[col, cc]
    for r in range(n - 1, -1, -1):
        for cc in range(B.shape[1]):
            acc = B[r, cc]
            for c2 in range(r + 1, n):
                acc -= M[r, c2] * B[c2, cc]
            B[r, cc] = acc / M[r, r]
    return B, True


def _pd_solve(form, Qm, offsets, gamma, t, Q, wts, act, use_sign, sgn, p0, s0,
          tol_abs, max_iter, stop_neg, stop_pos):
    N = p0.size
    n_seg = offsets.size - 1
    p = p0.copy()
    s = s0.copy()
    C = np.empty((2, N))
    for k in range(2):
        C[k] = -sgn[k] * Qm[k]
    F, dF, A, U, cu = _evaluate_k(form, p, Qm, offsets, t, Q, wts)
    fmax = -np.inf
    n_act = 0
    for k in range(2):
        if act[k]:
            fmax = max(fmax, F[k])
            n_act += 1
    y = fmax + 0.5 * max(abs(fmax), tol_abs, 1e-300) + tol_abs
    su = _seg_expand_k(s, offsets)
    g = p - su
    h = gamma * su - p
    r = np.ones(2)
    lk = np.ones(2)
    inv_sum = 0.0
    for k in range(2):
        if act[k]:
            r[k] = y - F[k]
            inv_sum += 1.0 / r[k]
        if use_sign:
            lk[k] = sgn[k] * (t[k] - np.dot(Qm[k], p))
    mu0 = 1.0 / inv_sum
    zg = mu0 / g
    zh = mu0 / h
    lam = np.zeros(2)
    zl = np.zeros(2)
    for k in range(2):
        if act[k]:
            lam[k] = mu0 / r[k]
        if use_sign:
            zl[k] = mu0 / lk[k]
    m_con = 2.0 * N + n_act + (2.0 if use_sign else 0.0)
    best_ub = np.inf
    best_lb = -np.inf
    best_p = p.copy()
    status = STATUS_MAXITER
    it = 0
    Lmax = 5
    Ucol = np.zeros((N, Lmax))
    coef = np.zeros(Lmax)
    while True:
        su = _seg_expand_k(s, offsets)
        g = p - su
        h = gamma * su - p
        F, dF, A, U, cu = _evaluate_k(form, p, Qm, offsets, t, Q, wts)
        if not (np.all(np.isfinite(F)) and g.min() > 0.0 and h.min() > 0.0):
            # rounding has pushed an iterate onto the boundary
            status = STATUS_FAILED
            break
        comp = np.dot(zg, g) + np.dot(zh, h)
        ub = -np.inf
        lam_sum = 0.0
        e = np.zeros(2)
        for k in range(2):
            if act[k]:
                e[k] = y - F[k] - r[k]
                ub = max(ub, F[k])
                comp += lam[k] * r[k]
                lam_sum += lam[k]
            if use_sign:
                lk[k] = sgn[k] * (t[k] - np.dot(Qm[k], p))
                comp += zl[k] * lk[k]
        mu = comp / m_con
        if use_sign and (lk[0] <= 0.0 or lk[1] <= 0.0):
            status = STATUS_FAILED
            break
        if ub < best_ub:
            best_ub = ub
            best_p = p.copy()
        # lower bound from the linearised Lagrangian
        dvec = np.zeros(N)
        val = 0.0
        for k in range(2):
            if act[k]:
                dvec += (lam[k] / lam_sum) * dF[k]
                val += (lam[k] / lam_sum) * F[k]
            if use_sign:
                zk = zl[k] / lam_sum
                dvec -= zk * C[k]
                val -= zk * lk[k]
        vmax = _vertex_argmax_k(-dvec, offsets, gamma)[0]
        lb = val - vmax.sum() - np.dot(dvec, p)
        if lb > best_lb:
            best_lb = lb
        if stop_neg and best_ub < 0.0:
            status = STATUS_NEGATIVE
            break
        if stop_pos and best_lb > 0.0:
            status = STATUS_POSITIVE
            break
        if best_ub - best_lb <= tol_abs:
            status = STATUS_CONVERGED
            break
        if it >= max_iter:
            break
        if comp <= STALL_RTOL * max(1.0, abs(ub)):
            # complementarity is at rounding level; further steps only add noise
            status = STATUS_STALLED
            break
        # Newton system, right-hand sides for centring target 0 and 1
        wg = zg / g
        wh = zh / h
        Ab = np.zeros(2)
        a = np.zeros(2)
        delta = 0.0
        hsum = np.zeros(N)
        for k in range(2):
            if act[k]:
                Ab[k] = lam[k] * A[k]
                a[k] = lam[k] / r[k]
                delta += a[k]
                hsum += a[k] * dF[k]
        L = 0
        for k in range(2):
            if act[k] and cu[k] * lam[k] > 0.0:
                Ucol[:, L] = U[k]
                coef[L] = lam[k] * cu[k]
                L += 1
        if use_sign:
            for k in range(2):
                if zl[k] <= 0.0:
                    continue
                Ucol[:, L] = C[k]
                coef[L] = zl[k] / lk[k]
                L += 1
        if act[0] and act[1]:
            Ucol[:, L] = dF[0] - dF[1]
            coef[L] = a[0] * a[1] / delta
            L += 1
        ry1 = 0.0
        rp1 = 1.0 / g - 1.0 / h
        for k in range(2):
            if act[k]:
                rp1 -= dF[k] / r[k]
                ry1 += 1.0 / r[k]
            if use_sign:
                rp1 += C[k] / lk[k]
        ry0 = -1.0
        ea = np.zeros(N)
        for k in range(2):
            if act[k]:
                ry0 -= a[k] * e[k]
                ea += (a[k] * e[k]) * dF[k]
        Rp = np.zeros((N, 2 + L))
        Rs = np.zeros((n_seg, 2 + L))
        Rp[:, 0] = ea + hsum * (ry0 / delta)
        Rp[:, 1] = rp1 + hsum * (ry1 / delta)
        Rs[:, 1] = _seg_sum_k(-1.0 / g + gamma / h, offsets)
        for c in range(L):
            Rp[:, 2 + c] = Ucol[:, c]
        if not (np.all(np.isfinite(Rp)) and np.all(np.isfinite(wg))
                and np.all(np.isfinite(wh)) and np.isfinite(delta)):
            status = STATUS_FAILED
            break
        Xp, Xs = _block_solve_k(wg, wh, Ab, Qm, offsets, gamma, Rp, Rs)
        if not (np.all(np.isfinite(Xp)) and np.all(np.isfinite(Xs))):
            status = STATUS_FAILED
            break
        Msm = np.zeros((L, L))
        rhs = np.zeros((L, 2))
        for i1 in range(L):
            ui = np.ascontiguousarray(Ucol[:, i1])
            for j in range(2):
                rhs[i1, j] = np.dot(ui, np.ascontiguousarray(Xp[:, j]))
            for j in range(L):
                Msm[i1, j] = np.dot(ui, np.ascontiguousarray(Xp[:, 2 + j]))
            Msm[i1, i1] += 1.0 / coef[i1]
        zsol, ok = _small_solve_k(Msm, rhs)
        if not ok:
            status = STATUS_FAILED
            break
        dp0 = np.ascontiguousarray(Xp[:, 0]).copy()
        dp1 = np.ascontiguousarray(Xp[:, 1]).copy()
        ds0 = np.ascontiguousarray(Xs[:, 0]).copy()
        ds1 = np.ascontiguousarray(Xs[:, 1]).copy()
        for c in range(L):
            dp0 -= zsol[c, 0] * Xp[:, 2 + c]
            dp1 -= zsol[c, 1] * Xp[:, 2 + c]
            ds0 -= zsol[c, 0] * Xs[:, 2 + c]
            ds1 -= zsol[c, 1] * Xs[:, 2 + c]
        dy0 = (ry0 + np.dot(hsum, dp0)) / delta
        dy1 = (ry1 + np.dot(hsum, dp1)) / delta
        # predictor (target 0), then a centring target from its progress
        sigma = 1.0
        for phase in range(2):
            mu_t = 0.0 if phase == 0 else sigma * mu
            dp = dp0 + mu_t * dp1
            ds = ds0 + mu_t * ds1
            dy = dy0 + mu_t * dy1
            dsu = _seg_expand_k(ds, offsets)
            dgv = dp - dsu
            dhv = gamma * dsu - dp
            dzg = mu_t / g - zg - wg * dgv
            dzh = mu_t / h - zh - wh * dhv
            dr = np.zeros(2)
            dlam = np.zeros(2)
            dl = np.zeros(2)
            dzl = np.zeros(2)
            for k in range(2):
                if act[k]:
                    dr[k] = dy - np.dot(dF[k], dp) + e[k]
                    dlam[k] = mu_t / r[k] - lam[k] - a[k] * dr[k]
                if use_sign:
                    dl[k] = np.dot(C[k], dp)
                    dzl[k] = mu_t / lk[k] - zl[k] - (zl[k] / lk[k]) * dl[k]
            amax = 1.0
            for j in range(N):
                if dgv[j] < 0.0:
                    amax = min(amax, -g[j] / dgv[j])
                if dhv[j] < 0.0:
                    amax = min(amax, -h[j] / dhv[j])
                if dzg[j] < 0.0:
                    amax = min(amax, -zg[j] / dzg[j])
                if dzh[j] < 0.0:
                    amax = min(amax, -zh[j] / dzh[j])
            for k in range(2):
                if act[k]:
                    if dr[k] < 0.0:
                        amax = min(amax, -r[k] / dr[k])
                    if dlam[k] < 0.0:
                        amax = min(amax, -lam[k] / dlam[k])
                if use_sign:
                    if dl[k] < 0.0:
                        amax = min(amax, -lk[k] / dl[k])
                    if dzl[k] < 0.0:
                        amax = min(amax, -zl[k] / dzl[k])
            if phase == 0:
                caff = (np.dot(zg + amax * dzg, g + amax * dgv)
                        + np.dot(zh + amax * dzh, h + amax * dhv))
                for k in range(2):
                    if act[k]:
                        caff += (lam[k] + amax * dlam[k]) * (r[k] + amax * dr[k])
                    if use_sign:
                        caff += (zl[k] + amax * dzl[k]) * (lk[k] + amax * dl[k])
                ratio = max(caff / m_con, 0.0) / mu
                sigma = min(ratio * ratio * ratio, 1.0)
        step = STEP_FRACTION * amax
        if not np.isfinite(step) or step <= 0.0:
            status = STATUS_FAILED
            break
        p = p + step * dp
        s = s + step * ds
        y = y + step * dy
        zg = zg + step * dzg
        zh = zh + step * dzh
        for k in range(2):
            if act[k]:
                lam[k] = lam[k] + step * dlam[k]
                r[k] = r[k] + step * dr[k]
            if use_sign:
                zl[k] = zl[k] + step * dzl[k]
        it += 1
    return best_ub, best_lb, best_p, it, status



# ---------------------------------------------------------------------------
# assemble both flavours
#
# The solver functions above call their helpers through the module-level names
# ``_*_k``.  The numba flavour compiles them against the numba helpers; the
# numpy flavour is the same code rebound to a namespace holding the numpy
# helpers.  Keeping them top-level (rather than closures) lets numba cache them.

def _rebind(fn, namespace):
    return types.FunctionType(fn.__code__, namespace, fn.__name__, fn.__defaults__)


_np_space = dict(globals())
_np_space.update(_seg_sum_k=seg_sum_np, _seg_expand_k=seg_expand_np,
                 _block_solve_k=block_solve_np, _vertex_argmax_k=vertex_argmax_np,
                 _small_solve_k=_small_solve)
pd_evaluate_np = _np_space["_evaluate_k"] = _rebind(_pd_evaluate, _np_space)
maxmin_affine_np = _rebind(_maxmin_affine, _np_space)
pd_solve_np = _rebind(_pd_solve, _np_space)

if _accel.HAVE_NUMBA:
    def _nb_compile(fn):
        return _accel.numba.njit(error_model="numpy", cache=True)(fn)

    _seg_sum_k = seg_sum_nb
    _seg_expand_k = seg_expand_nb
    _block_solve_k = block_solve_nb
    _vertex_argmax_k = vertex_argmax_nb
    _small_solve_k = _nb_compile(_small_solve)
    _evaluate_k = pd_evaluate_nb = _nb_compile(_pd_evaluate)
    maxmin_affine_nb = _nb_compile(_maxmin_affine)
    pd_solve_nb = _nb_compile(_pd_solve)
else:  # pragma: no cover
    pd_evaluate_nb = pd_evaluate_np
    maxmin_affine_nb = maxmin_affine_np
    pd_solve_nb = pd_solve_np


def _pick(nb, np_):
    return nb if _accel.USE_NUMBA else np_


seg_sum = _pick(seg_sum_nb, seg_sum_np)
seg_expand = _pick(seg_expand_nb, seg_expand_np)
sep_moments = _pick(sep_moments_nb, sep_moments_np)
vertex_argmax = _pick(vertex_argmax_nb, vertex_argmax_np)
rho_grad = _pick(rho_grad_nb, rho_grad_np)
phi_rows = _pick(phi_rows_nb, phi_rows_np)
block_solve = _pick(block_solve_nb, block_solve_np)
maxmin_affine = _pick(maxmin_affine_nb, maxmin_affine_np)
pd_solve = _pick(pd_solve_nb, pd_solve_np)
