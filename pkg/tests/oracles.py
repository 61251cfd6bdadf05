"""Slow, independent reference implementations used as test oracles.

Nothing here imports nndm internals beyond plain data containers, so a bug in
the library cannot leak into the expected values.
"""

import numpy as np
from scipy import stats
from scipy.special import logsumexp


def brute_force_members(X, k):
    """Owner first, then the k-1 nearest others by full sort on (sqdist, index)."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    n = X.shape[0]
    out = []
    for i in range(n):
        d = [(float(((X[j] - X[i]) ** 2).sum()), j) for j in range(n) if j != i]
        d.sort()
        out.append([i] + [j for _, j in d[: k - 1]])
    return np.array(out)


def moments(points):
    points = np.asarray(points, dtype=float)
    mean = points.mean(axis=0)
    c = points - mean
    return mean, c.T @ c


def naive_loo_stats(X, k, j, i):
    """k-neighborhood mean and scatter of X_j recomputed from scratch without X_i."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    Xm = np.delete(X, i, axis=0)
    jj = j - (j > i)
    members = brute_force_members(Xm, k)[jj]
    return moments(Xm[members])


def naive_posterior(points, mu0, nu0, gamma0, psi0):
    """Textbook normal-inverse-Wishart update from the raw neighborhood points."""
    points = np.asarray(points, dtype=float)
    k = points.shape[0]
    xbar = points.mean(axis=0)
    S = sum(np.outer(x - xbar, x - xbar) for x in points)
    nu_n = nu0 + k
    mu = (nu0 * mu0 + k * xbar) / nu_n
    psi = psi0 + S + (k * nu0 / nu_n) * np.outer(xbar - mu0, xbar - mu0)
    return mu, nu_n, gamma0 + k, psi


def naive_mean_logdensity(X, k, x, mu0, nu0, gamma0, psi0):
    """log of the average predictive t density, via scipy's multivariate t."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    p = X.shape[1]
    members = brute_force_members(X, k)
    logs = []
    for row in members:
        mu, nu_n, gamma_n, psi = naive_posterior(X[row], mu0, nu0, gamma0, psi0)
        df = gamma_n - p + 1
        lam = (nu_n + 1) / (nu_n * df) * psi
        logs.append(stats.multivariate_t(loc=mu, shape=lam, df=df).logpdf(x))
    return logsumexp(logs) - np.log(len(logs))


def naive_cv_scores(X, k, grid, mu0, nu0, gamma0):
    """Leave-one-out log-likelihood recomputed from scratch for every point and candidate."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    n, p = X.shape
    scores = []
    for d in grid:
        psi0 = (gamma0 - p + 1) * d * np.eye(p)
        total = 0.0
        for i in range(n):
            total += naive_mean_logdensity(np.delete(X, i, axis=0), k, X[i], mu0, nu0, gamma0, psi0)
        scores.append(total / n)
    return np.array(scores)


def mp_mvt_logpdf(x, df, loc, scale, dps=50):
    """Student t log density in mpmath arbitrary precision."""
    import mpmath as mp

    mp.mp.dps = dps
    p = len(loc)
    S = mp.matrix([[mp.mpf(float(v)) for v in row] for row in scale])
    d = mp.matrix([mp.mpf(float(a)) - mp.mpf(float(b)) for a, b in zip(x, loc)])
    q = (d.T * mp.inverse(S) * d)[0]
    nu = mp.mpf(df)
    val = (
        mp.loggamma((nu + p) / 2)
        - mp.loggamma(nu / 2)
        - mp.mpf(p) / 2 * mp.log(nu * mp.pi)
        - mp.log(mp.det(S)) / 2
        - (nu + p) / 2 * mp.log(1 + q / nu)
    )
    return float(val)


def trapezoid(y, x):
    return float(np.trapezoid(y, x))
