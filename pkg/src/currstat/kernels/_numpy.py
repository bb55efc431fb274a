"""Pure-numpy kernel implementations (fallback path).

Vectorized where possible; the PAVA block merge is inherently sequential
but runs on numpy scalars only at merge points.
"""

import numpy as np

_LAM_FLOOR = 1e-10


def pava(values, weights):
    """Weighted isotonic (nondecreasing) least-squares fit.

    Returns the unique minimizer of sum w_i (f_i - v_i)^2 over
    nondecreasing f, by pool-adjacent-violators with block merging.
    """
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
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
    return np.repeat(level[:nb], count[:nb])


def cs_loglik(u, delta):
    """Current-status log likelihood in terms of u_i = Lambda(y_i) e^{eta_i}.

    sum_i [ delta_i log(1 - exp(-u_i)) - (1 - delta_i) u_i ].
    Returns -inf if any delta_i = 1 has u_i <= 0.
    """
    u = np.asarray(u, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    ev = delta > 0.5
    if np.any(u[ev] <= 0.0):
        return -np.inf
    ll = -np.sum(u[~ev])
    ll += np.sum(np.log(-np.expm1(-u[ev])))
    return ll


def _u_derivs(u, delta):
    """Per-observation d/du and d2/du2 of the current-status loglik."""
    ev = delta > 0.5
    s = -np.expm1(-u)  # 1 - exp(-u)
    s = np.maximum(s, 1e-300)
    r = np.exp(-u) / s
    dldu = np.where(ev, r, -1.0)
    d2ldu2 = np.where(ev, -r / s, 0.0)
    return dldu, d2ldu2


def cox_fit(X, delta, gidx, lam0, beta0, tol, max_iter, ridge):
    """Alternating maximizer of the current-status Cox likelihood.

    X: (n, p) design; delta: event indicators; gidx: index of each
    observation into the sorted unique response times; lam0: initial
    baseline cumulative hazard at the unique times (nondecreasing);
    beta0: initial coefficients.

    Returns (beta, lam, loglik, n_iter, converged).
    """
    X = np.asarray(X, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    gidx = np.asarray(gidx, dtype=np.int64)
    n, p = X.shape
    m = lam0.shape[0]
    beta = np.asarray(beta0, dtype=np.float64).copy()
    lam = lam0.copy()
    eta = X @ beta
    eeta = np.exp(eta)
    ll = cs_loglik(lam[gidx] * eeta, delta)
    converged = 0
    it = 0
    for it in range(1, max_iter + 1):
        ll_prev = ll

        # ICM update of the baseline cumulative hazard
        u = lam[gidx] * eeta
        dldu, d2ldu2 = _u_derivs(u, delta)
        grad = np.bincount(gidx, weights=eeta * dldu, minlength=m)
        curv = np.bincount(gidx, weights=eeta * eeta * (-d2ldu2), minlength=m)
        curv = curv + ridge
        target = lam + grad / curv
        prop = np.maximum(pava(target, curv), _LAM_FLOOR)
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
            u = lam[gidx] * eeta
            dldu, d2ldu2 = _u_derivs(u, delta)
            dleta = u * dldu
            d2leta = u * dldu + u * u * d2ldu2
            gb = X.T @ dleta
            H = X.T @ (d2leta[:, None] * X)
            H = H - ridge * np.eye(p)
            direction = np.linalg.solve(-H, gb)
            step = 1.0
            for _ in range(20):
                beta_new = beta + step * direction
                eta_new = X @ beta_new
                eeta_new = np.exp(eta_new)
                ll_new = cs_loglik(lam[gidx] * eeta_new, delta)
                if ll_new >= ll:
                    beta = beta_new
                    eta = eta_new
                    eeta = eeta_new
                    ll = ll_new
                    break
                step *= 0.5

        if abs(ll - ll_prev) <= tol * (abs(ll_prev) + 1e-10):
            converged = 1
            break
    return beta, lam, ll, it, converged
