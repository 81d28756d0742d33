"""Pure NumPy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled versions are tested against.
"""

import math

import numpy as np


def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    m = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, m + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def simplex_lsq(Q, c, tol=1e-13, max_iter=0):
    """Minimise ``0.5 b'Qb - c'b`` subject to ``b >= 0`` and ``sum(b) == 1``.

    Primal active-set method started from the best vertex. ``Q`` must be
    symmetric positive definite. Returns ``(b, iterations)``.
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    m = c.size
    if max_iter <= 0:
        max_iter = 20 * m + 20
    scale = max(1.0, float(np.abs(Q).max()), float(np.abs(c).max()))
    dual_tol = tol * scale
    i0 = int(np.argmin(0.5 * np.diag(Q) - c))
    beta = np.zeros(m)
    beta[i0] = 1.0
    free = [i0]
    for it in range(1, max_iter + 1):
        F = sorted(free)
        nf = len(F)
        kkt = np.zeros((nf + 1, nf + 1))
        kkt[:nf, :nf] = Q[np.ix_(F, F)]
        kkt[:nf, nf] = 1.0
        kkt[nf, :nf] = 1.0
        rhs = np.append(c[F], 1.0)
        sol = np.linalg.solve(kkt, rhs)
        p, nu = sol[:nf], sol[nf]
        if (p >= 0.0).all():
            beta = np.zeros(m)
            beta[F] = p
            lam = Q @ beta - c + nu
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


def _sweep(A, k):
    d = A[k, k]
    A[k, :] /= d
    col = A[:, k].copy()
    col[k] = 0.0
    A -= np.outer(col, A[k, :])
    A[:, k] = -col / d
    A[k, k] = 1.0 / d


def forward_stepwise(G, xy, yy, n, penalty=2.0, tol=1e-10):
    """Greedy forward selection by AIC from centered cross-products.

    ``G`` is the centered covariate Gram matrix, ``xy`` the centered
    covariate/outcome cross-products and ``yy`` the centered outcome sum of
    squares. Returns ``(selected, coef)`` with ``selected`` in entry order.
    """
    G = np.asarray(G, dtype=float)
    xy = np.asarray(xy, dtype=float)
    D = xy.size
    A = np.empty((D + 1, D + 1))
    A[:D, :D] = G
    A[:D, D] = xy
    A[D, :D] = xy
    A[D, D] = yy
    diag0 = np.diag(G).copy()
    floor = max(yy, 1e-300) * 1e-14
    used = np.zeros(D, dtype=bool)
    selected = []
    aic = n * math.log(max(A[D, D], floor) / n) + penalty
    while True:
        best = -1
        best_aic = aic
        for j in range(D):
            if used[j] or diag0[j] <= 0.0 or A[j, j] <= tol * diag0[j]:
                continue
            rss = A[D, D] - A[j, D] * A[j, D] / A[j, j]
            a = n * math.log(max(rss, floor) / n) + penalty * (len(selected) + 2)
            if a < best_aic:
                best = j
                best_aic = a
        if best < 0:
            break
        _sweep(A, best)
        used[best] = True
        selected.append(best)
        aic = best_aic
    coef = np.zeros(D)
    for j in selected:
        coef[j] = A[j, D]
    return selected, coef
