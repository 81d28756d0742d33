# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``.

Same signatures and semantics; see that module for documentation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, fabs

cnp.import_array()


def project_simplex(v):
    cdef cnp.ndarray[double, ndim=1] x = np.ascontiguousarray(v, dtype=np.float64).ravel()
    cdef Py_ssize_t m = x.shape[0], i, rho = 0
    cdef cnp.ndarray[double, ndim=1] u = np.sort(x)[::-1].copy()
    cdef double css = 0.0, theta = 0.0, run = 0.0
    for i in range(m):
        run += u[i]
        if u[i] - (run - 1.0) / (i + 1) > 0:
            rho = i
            css = run
    theta = (css - 1.0) / (rho + 1.0)
    out = np.empty(m)
    cdef double[::1] o = out
    for i in range(m):
        o[i] = x[i] - theta if x[i] > theta else 0.0
    return out


cdef void _sweep(double[:, ::1] A, Py_ssize_t k, Py_ssize_t p) nogil:
    cdef double d = A[k, k], b
    cdef Py_ssize_t i, j
    for j in range(p):
        A[k, j] /= d
    for i in range(p):
        if i == k:
            continue
        b = A[i, k]
        if b != 0.0:
            for j in range(p):
                A[i, j] -= b * A[k, j]
        A[i, k] = -b / d
    A[k, k] = 1.0 / d


def forward_stepwise(G, xy, double yy, double n, double penalty=2.0, double tol=1e-10):
    cdef cnp.ndarray[double, ndim=1] cxy = np.ascontiguousarray(xy, dtype=np.float64)
    cdef Py_ssize_t D = cxy.shape[0], j, best, nsel = 0
    Aarr = np.empty((D + 1, D + 1))
    cdef double[:, ::1] A = Aarr
    Aarr[:D, :D] = G
    Aarr[:D, D] = cxy
    Aarr[D, :D] = cxy
    A[D, D] = yy
    diag0_arr = np.array(np.diag(np.asarray(G, dtype=np.float64)), dtype=np.float64, copy=True)
    cdef double[::1] diag0 = diag0_arr
    used_arr = np.zeros(D, dtype=np.uint8)
    cdef unsigned char[::1] used = used_arr
    cdef double floor = (yy if yy > 1e-300 else 1e-300) * 1e-14
    cdef double aic, best_aic, rss, a
    selected = []
    rss = A[D, D]
    aic = n * log((rss if rss > floor else floor) / n) + penalty
    while True:
        best = -1
        best_aic = aic
        for j in range(D):
            if used[j] or diag0[j] <= 0.0 or A[j, j] <= tol * diag0[j]:
                continue
            rss = A[D, D] - A[j, D] * A[j, D] / A[j, j]
            a = n * log((rss if rss > floor else floor) / n) + penalty * (nsel + 2)
            if a < best_aic:
                best = j
                best_aic = a
        if best < 0:
            break
        _sweep(A, best, D + 1)
        used[best] = 1
        selected.append(best)
        nsel += 1
        aic = best_aic
    coef = np.zeros(D)
    for j in selected:
        coef[j] = A[j, D]
    return selected, coef


def simplex_lsq(Q, c, double tol=1e-13, int max_iter=0):
    cdef cnp.ndarray[double, ndim=2] cQ = np.ascontiguousarray(Q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] cc = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t m = cc.shape[0], t, nf, block, j, i0
    cdef double scale, dual_tol, alpha, a, nu, s
    if max_iter <= 0:
        max_iter = 20 * m + 20
    scale = max(1.0, float(np.abs(cQ).max()), float(np.abs(cc).max()))
    dual_tol = tol * scale
    i0 = int(np.argmin(0.5 * np.diag(cQ) - cc))
    beta = np.zeros(m)
    beta[i0] = 1.0
    free = [i0]
    cdef int it
    for it in range(1, max_iter + 1):
        F = sorted(free)
        nf = len(F)
        kkt = np.zeros((nf + 1, nf + 1))
        kkt[:nf, :nf] = cQ[np.ix_(F, F)]
        kkt[:nf, nf] = 1.0
        kkt[nf, :nf] = 1.0
        rhs = np.append(cc[F], 1.0)
        sol = np.linalg.solve(kkt, rhs)
        p = sol[:nf]
        nu = sol[nf]
        if (p >= 0.0).all():
            beta = np.zeros(m)
            beta[F] = p
            lam = cQ @ beta - cc + nu
            lam[F] = 0.0
            j = int(np.argmin(lam))
            if lam[j] >= -dual_tol:
                return beta, it
            free.append(j)
        else:
            bF = beta[F]
            alpha = 1.0
            block = -1
            for t in range(nf):
                if p[t] < 0.0:
                    a = bF[t] / (bF[t] - p[t])
                    if a < alpha:
                        alpha = a
                        block = t
            bF = bF + alpha * (p - bF)
            bF[block] = 0.0
            beta = np.zeros(m)
            beta[F] = np.maximum(bF, 0.0)
            free = [F[t] for t in range(nf) if t != block and bF[t] > 0.0]
            if not free:
                free = [F[block]]
                beta[F[block]] = 1.0
            s = beta.sum()
            beta /= s
    return beta, -1
