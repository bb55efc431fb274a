"""Numba-compiled kernel implementations (default path)."""

import numpy as np
from numba import njit

_LAM_FLOOR = 1e-10


@njit(cache=True)
def pava(values, weights):
    v = np.asarray(values)
    w = np.asarray(weights)
    n = v.shape[0]
    level = np.empty(n)
    weight = np.empty(n)
    count = np.empty(n, dtype=np.int64)
    nb = 0
    for i in range(n):
        level[nb] = v[i]
        weight[nb] = w[i]
        count[nb] = 1
        nb += 1
        while nb > 1 and level[nb - 2] >= level[nb - 1]:
            tw = weight[nb - 2] + weight[nb - 1]
            level[nb - 2] = (weight[nb - 2] * level[nb - 2]
                             + weight[nb - 1] * level[nb - 1]) / tw
            weight[nb - 2] = tw
            count[nb - 2] += count[nb - 1]
            nb -= 1
    out = np.empty(n)
    j = 0
    for b in range(nb):
        for _ in range(count[b]):
            out[j] = level[b]
            j += 1
    return out


@njit(cache=True)
def cs_loglik(u, delta):
    ll = 0.0
    for i in range(u.shape[0]):
        if delta[i] > 0.5:
            if u[i] <= 0.0:
                return -np.inf
            ll += np.log(-np.expm1(-u[i]))
        else:
            ll -= u[i]
    return ll


@njit(cache=True)
def cox_fit(X, delta, gidx, lam0, beta0, tol, max_iter, ridge):
    n, p = X.shape
    m = lam0.shape[0]
    beta = beta0.copy()
    lam = lam0.copy()
    eeta = np.exp(X @ beta)
    ll = cs_loglik(lam[gidx] * eeta, delta)
    converged = 0
    it = 0
    grad = np.empty(m)
    curv = np.empty(m)
    for it in range(1, max_iter + 1):
        ll_prev = ll

        # ICM update of the baseline cumulative hazard
        grad[:] = 0.0
        curv[:] = ridge
        for i in range(n):
            u = lam[gidx[i]] * eeta[i]
            if delta[i] > 0.5:
                s = -np.expm1(-u)
                if s < 1e-300:
                    s = 1e-300
                r = np.exp(-u) / s
                grad[gidx[i]] += eeta[i] * r
                curv[gidx[i]] += eeta[i] * eeta[i] * r / s
            else:
                grad[gidx[i]] -= eeta[i]
        target = lam + grad / curv
        prop = pava(target, curv)
        for k in range(m):
            if prop[k] < _LAM_FLOOR:
                prop[k] = _LAM_FLOOR
        step = 1.0
        for _ in range(20):
            lam_new = lam + step * (prop - lam)
            ll_new = cs_loglik(lam_new[gidx] * eeta, delta)
            if ll_new >= ll:
                lam = lam_new
                ll = ll_new
                break
            step *= 0.5

        # Damped Newton update of beta
        if p > 0:
            gb = np.zeros(p)
            H = np.zeros((p, p))
            for i in range(n):
                u = lam[gidx[i]] * eeta[i]
                if delta[i] > 0.5:
                    s = -np.expm1(-u)
                    if s < 1e-300:
                        s = 1e-300
                    r = np.exp(-u) / s
                    dleta = u * r
                    d2leta = u * r - u * u * r / s
                else:
                    dleta = -u
                    d2leta = -u
                for a in range(p):
                    gb[a] += X[i, a] * dleta
                    for b in range(p):
                        H[a, b] += X[i, a] * d2leta * X[i, b]
            for a in range(p):
                H[a, a] -= ridge
            direction = np.linalg.solve(-H, gb)
            step = 1.0
            for _ in range(20):
                beta_new = beta + step * direction
                eeta_new = np.exp(X @ beta_new)
                ll_new = cs_loglik(lam[gidx] * eeta_new, delta)
                if ll_new >= ll:
                    beta = beta_new
                    eeta = eeta_new
                    ll = ll_new
                    break
                step *= 0.5

        if abs(ll - ll_prev) <= tol * (abs(ll_prev) + 1e-10):
            converged = 1
            break
    return beta, lam, ll, it, converged
