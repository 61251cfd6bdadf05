"""Conjugate neighborhood updates, Student-t / Gaussian kernels and pseudo-posterior draws.

Functions that take a ``model`` only need it to expose ``hyper``, ``mu``
``(n, p)``, ``psi`` ``(n, p, p)``, ``psi_chol`` (lower Cholesky factors of
``psi``), ``psi_logdet``, ``nu_n``, ``gamma_n``, ``n`` and ``p``;
:class:`nndm.estimator.FittedModel` is the canonical implementation.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import InvalidParameterError, NumericalError, UnsupportedError
from .hyper import bandwidth_h2

LOG_2PI = math.log(2.0 * math.pi)

# Draws are generated in fixed-size blocks, each from its own seed substream.
# A draw's value depends only on (seed, draw index), never on M or on scheduling.
DRAW_BLOCK = 32
_STREAM_DRAWS = 0

_EVAL_ELEMENTS = 1 << 21


@dataclass(frozen=True, eq=False)
class NeighborhoodPosterior:
    """Normal-inverse-Wishart pseudo-posterior of one neighborhood's kernel."""

    mu_i: np.ndarray
    nu_n: float
    gamma_n: float
    psi_i: np.ndarray

    @property
    def lambda_i(self):
        p = self.mu_i.size
        return (self.nu_n + 1) / (self.nu_n * (self.gamma_n - p + 1)) * self.psi_i


def conjugate_update(means, scatters, hyper):
    """Vectorized update of stacked neighborhood statistics.

    ``means`` is ``(n, p)`` and ``scatters`` ``(n, p, p)`` (sums about the
    mean, ``k`` points each).  Returns ``(mu, psi)`` with the same shapes.
    """
    k = hyper.k
    nu_n = hyper.nu_n
    mu = (hyper.nu0 * hyper.mu0 + k * means) / nu_n
    d = means - hyper.mu0
    psi = hyper.psi0 + scatters + (k * hyper.nu0 / nu_n) * (d[:, :, None] * d[:, None, :])
    psi = 0.5 * (psi + np.swapaxes(psi, 1, 2))
    return mu, psi


def update_neighborhood(nbhd, hyper):
    """Conjugate update of a single :class:`~nndm.neighbors.Neighborhood`."""
    if nbhd.members.size != hyper.k:
        raise InvalidParameterError(
            f"neighborhood has {nbhd.members.size} members but hyper.k = {hyper.k}"
        )
    if nbhd.mean.size != hyper.p:
        raise InvalidParameterError(f"neighborhood has p={nbhd.mean.size}, prior has p={hyper.p}")
    mu, psi = conjugate_update(nbhd.mean[None, :], nbhd.scatter[None, :, :], hyper)
    return NeighborhoodPosterior(mu[0], hyper.nu_n, hyper.gamma_n, psi[0])


def nig_update(values, hyper):
    """Univariate normal-inverse-gamma update from raw neighborhood values.

    ``values`` is ``(n, k)``.  Returns ``(mu_i, delta_i^2)`` so that
    ``sigma_i^2 ~ IG(gamma_n / 2, gamma_n delta_i^2 / 2)``.
    """
    values = np.asarray(values, dtype=float)
    k = values.shape[1]
    mu0 = float(hyper.mu0[0])
    nu0, gamma0 = hyper.nu0, hyper.gamma0
    nu_n, gamma_n = nu0 + k, gamma0 + k
    xbar = values.mean(axis=1)
    ss = ((values - xbar[:, None]) ** 2).sum(axis=1)
    mu = nu0 / nu_n * mu0 + k / nu_n * xbar
    delta2 = (gamma0 * hyper.delta0sq + ss + k * nu0 / nu_n * (mu0 - xbar) ** 2) / gamma_n
    return mu, delta2


def univariate_mean_density(x, mu, delta2, nu_n, gamma_n):
    """Mixture of scaled univariate t densities ``(1/lambda_i) t_{gamma_n}((x - mu_i) / lambda_i)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lam = np.sqrt(delta2 * (nu_n + 1) / nu_n)
    u = (x[:, None] - mu[None, :]) / lam[None, :]
    logc = gammaln((gamma_n + 1) / 2) - gammaln(gamma_n / 2) - 0.5 * math.log(gamma_n * math.pi)
    logk = logc - (gamma_n + 1) / 2 * np.log1p(u**2 / gamma_n) - np.log(lam)[None, :]
    return np.exp(logsumexp(logk, axis=1) - math.log(mu.size))


def _cholesky(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("matrix is not positive definite") from exc


def mvt_logpdf(x, df, loc, scale):
    """Log density of the ``p``-variate Student t with ``df`` degrees of freedom.

    ``scale`` is the scale matrix (not the covariance).
    """
    loc = np.atleast_1d(np.asarray(loc, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    scale = np.array(scale, dtype=float, ndmin=2)
    p = loc.size
    if not df > 0:
        raise InvalidParameterError(f"df must be positive, got {df}")
    L = _cholesky(scale)
    z = np.linalg.solve(L, x - loc)
    quad = float(z @ z)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    return float(
        gammaln((df + p) / 2)
        - gammaln(df / 2)
        - 0.5 * p * math.log(df * math.pi)
        - 0.5 * logdet
        - 0.5 * (df + p) * math.log1p(quad / df)
    )


def as_points(x, p):
    """Coerce ``x`` to an ``(m, p)`` array; also report whether it was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if p != 1:
            raise InvalidParameterError(f"a scalar is not a point in dimension {p}")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if p == 1:
            return arr[:, None], False
        if arr.size != p:
            raise InvalidParameterError(f"point has {arr.size} coordinates, expected {p}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != p:
        raise InvalidParameterError(f"points must have shape (m, {p}), got {arr.shape}")
    return arr, False


def _quad_forms(model, X):
    """``(m, n)`` matrix of ``(x - mu_i)' psi_i^{-1} (x - mu_i)``."""
    m = X.shape[0]
    n, p = model.n, model.p
    if p == 1:
        d = X[:, 0][:, None] - model.mu[None, :, 0]
        with np.errstate(over="ignore"):
            return d**2 / model.psi[None, :, 0, 0]
    out = np.empty((m, n))
    L = model.psi_chol
    step = max(1, _EVAL_ELEMENTS // (n * p))
    for s in range(0, m, step):
        xb = X[s : s + step]
        # (n, p, b): solve L_i z = x - mu_i for a block of evaluation points at once
        diff = xb.T[None, :, :] - model.mu[:, :, None]
        z = np.linalg.solve(L, diff)
        out[s : s + step] = np.einsum("npb,npb->bn", z, z)
    return out


def _t_mixture_logterms(model, X, df, factor):
    """Per-component log t densities with scale ``factor * psi_i``, shape ``(m, n)``."""
    p = model.p
    q = _quad_forms(model, X) / factor
    logdet = p * math.log(factor) + model.psi_logdet
    logc = gammaln((df + p) / 2) - gammaln(df / 2) - 0.5 * p * math.log(df * math.pi)
    return logc - 0.5 * logdet[None, :] - 0.5 * (df + p) * np.log1p(q / df)


def predictive_df(model):
    return model.gamma_n - model.p + 1


def predictive_factor(model):
    """``Lambda_i = predictive_factor * psi_i``."""
    return (model.nu_n + 1) / (model.nu_n * predictive_df(model))


def log_mean_density(model, x):
    """Log of the closed-form pseudo-posterior mean density."""
    X, single = as_points(x, model.p)
    terms = _t_mixture_logterms(model, X, predictive_df(model), predictive_factor(model))
    out = logsumexp(terms, axis=1) - math.log(model.n)
    return float(out[0]) if single else out


def posterior_mean_density(model, x):
    """Closed-form pseudo-posterior mean: the average of the ``n`` predictive t kernels."""
    return np.exp(log_mean_density(model, x))


@dataclass(frozen=True)
class DensityDraw:
    """One pseudo-posterior draw: Dirichlet weights and per-neighborhood Gaussian parameters."""

    weights: np.ndarray  # (n,)
    eta: np.ndarray  # (n, p)
    sigma: np.ndarray  # (n, p, p)


@dataclass(frozen=True, eq=False)
class DrawSet:
    """``M`` stacked draws.  Indexing returns a :class:`DensityDraw`."""

    weights: np.ndarray  # (M, n)
    eta: np.ndarray  # (M, n, p)
    sigma: np.ndarray  # (M, n, p, p)

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, t):
        return DensityDraw(self.weights[t], self.eta[t], self.sigma[t])

    def __iter__(self):
        return (self[t] for t in range(len(self)))

    @property
    def p(self):
        return self.eta.shape[2]

    def log_evaluate(self, x):
        """Log densities of every draw at every point, shape ``(M, m)``."""
        X, _ = as_points(x, self.p)
        return _log_gauss_mixture(self.weights, self.eta, self.sigma, X)

    def evaluate(self, x):
        """Densities of every draw at every point, shape ``(M, m)``."""
        return np.exp(self.log_evaluate(x))


def _log_gauss_mixture(weights, eta, sigma, X):
    M, n, p = eta.shape
    m = X.shape[0]
    out = np.empty((M, m))
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    step = max(1, _EVAL_ELEMENTS // (n * m * p))
    for s in range(0, M, step):
        sl = slice(s, s + step)
        if p == 1:
            var = sigma[sl, :, 0, 0]
            z2 = X[None, None, :, 0] - eta[sl, :, 0, None]
            np.square(z2, out=z2)
            z2 /= var[:, :, None]
            half_logdet = 0.5 * np.log(var)
        else:
            L = _cholesky(sigma[sl])
            diff = X.T[None, None, :, :] - eta[sl, :, :, None]
            z = np.linalg.solve(L, diff)
            z2 = np.einsum("bnpm,bnpm->bnm", z, z)
            half_logdet = np.log(np.diagonal(L, axis1=2, axis2=3)).sum(axis=2)
        # log(w_i) + log phi_i, built in place
        z2 *= -0.5
        z2 += (logw[sl] - half_logdet - 0.5 * p * LOG_2PI)[:, :, None]
        # scale by the largest term only where the plain sum would lose precision
        with np.errstate(under="ignore"):
            plain = np.exp(z2).sum(axis=1)
        small = plain < 1e-280
        with np.errstate(divide="ignore"):
            res = np.log(plain)
        if small.any():
            b, j = np.nonzero(small)
            res[b, j] = logsumexp(z2[b, :, j], axis=1)
        out[sl] = res
    return out


def evaluate_draw(draw, x):
    """Density of a single draw at ``x``, reduced with log-sum-exp."""
    p = draw.eta.shape[1]
    X, single = as_points(x, p)
    val = np.exp(_log_gauss_mixture(draw.weights[None], draw.eta[None], draw.sigma[None], X)[0])
    return float(val[0]) if single else val


def _block_rng(seed, block):
    ss = np.random.SeedSequence(int(seed), spawn_key=(_STREAM_DRAWS, int(block)))
    return np.random.Generator(np.random.Philox(ss))


def _sample_block(model, rng):
    n, p = model.n, model.p
    B = DRAW_BLOCK
    g = rng.standard_gamma(model.hyper.alpha + 1.0, size=(B, n))
    weights = g / g.sum(axis=1, keepdims=True)
    gamma_n, nu_n = model.gamma_n, model.nu_n
    if p == 1:
        chi = rng.chisquare(gamma_n, size=(B, n))
        var = model.psi[None, :, 0, 0] / chi
        z = rng.standard_normal((B, n))
        eta = model.mu[None, :, 0] + np.sqrt(var / nu_n) * z
        return weights, eta[:, :, None], var[:, :, None, None]
    # Bartlett: A A' ~ Wishart(gamma_n, I); with B = L^{-T} (L = chol psi),
    # W = B A A' B' ~ Wishart(gamma_n, psi^{-1}) and Sigma = W^{-1} = C C', C = L A^{-T}.
    chi = rng.chisquare(gamma_n - np.arange(p), size=(B, n, p))
    A = np.tril(rng.standard_normal((B, n, p, p)), -1)
    idx = np.arange(p)
    A[..., idx, idx] = np.sqrt(chi)
    Ct = np.linalg.solve(A, np.swapaxes(model.psi_chol, 1, 2)[None])
    C = np.swapaxes(Ct, 2, 3)
    sigma = C @ Ct
    sigma = 0.5 * (sigma + np.swapaxes(sigma, 2, 3))
    z = rng.standard_normal((B, n, p))
    eta = model.mu[None] + np.einsum("bnij,bnj->bni", C, z) / math.sqrt(nu_n)
    return weights, eta, sigma


def sample_draws(model, M, seed):
    """Draw ``M`` independent densities from the pseudo-posterior.

    Weights are ``Dirichlet(alpha + 1, ..., alpha + 1)``; each neighborhood's
    ``(eta, Sigma)`` is drawn from its normal-inverse-Wishart posterior.
    Identical ``seed`` gives identical draws, and draw ``t`` does not depend on
    ``M``.
    """
    M = int(M)
    if M < 1:
        raise InvalidParameterError(f"M must be positive, got {M}")
    n, p = model.n, model.p
    weights = np.empty((M, n))
    eta = np.empty((M, n, p))
    sigma = np.empty((M, n, p, p))
    for block in range(-(-M // DRAW_BLOCK)):
        w, e, s = _sample_block(model, _block_rng(seed, block))
        lo = block * DRAW_BLOCK
        hi = min(M, lo + DRAW_BLOCK)
        weights[lo:hi], eta[lo:hi], sigma[lo:hi] = w[: hi - lo], e[: hi - lo], s[: hi - lo]
    return DrawSet(weights, eta, sigma)


@dataclass(frozen=True)
class Band:
    """Pointwise equal-tailed credible band with the Monte Carlo mean."""

    lo: np.ndarray
    mean: np.ndarray
    hi: np.ndarray
    level: float


def quantile_band(values, level):
    """Equal-tailed band from an ``(M, m)`` matrix of sampled values.

    Quantiles interpolate linearly between order statistics on the empirical
    CDF (``numpy.quantile`` with ``method="interpolated_inverted_cdf"``), so
    with ``M`` draws the ``j``-th smallest value sits at probability ``j / M``.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] == 0:
        raise InvalidParameterError("cannot form a band from zero draws")
    if not 0.0 < level < 1.0:
        raise InvalidParameterError(f"level must lie in (0, 1), got {level}")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [tail, 1.0 - tail], axis=0, method="interpolated_inverted_cdf")
    return Band(lo=lo, mean=values.mean(axis=0), hi=hi, level=float(level))


def credible_band(draws, grid, level=0.95):
    """Pointwise credible band of the sampled densities over ``grid``."""
    if len(draws) == 0:
        raise InvalidParameterError("cannot form a band from zero draws")
    if not 0.0 < level < 1.0:
        raise InvalidParameterError(f"level must lie in (0, 1), got {level}")
    return quantile_band(draws.evaluate(grid), level)


@dataclass(frozen=True)
class VarianceDiagnostics:
    R_n: float
    D_n: float
    fhat_var_at_x: np.ndarray
    bound_at_x: np.ndarray


def variance_constants(nu_n, gamma_n, p):
    """The constants ``(R_n, D_n)`` of the pseudo-posterior variance bound."""
    a = gamma_n - p + 2
    if a <= 0:
        raise InvalidParameterError(f"gamma_n - p + 2 must be positive, got {a}")
    b = gamma_n - p + 1
    log_r = gammaln(a / 2) - gammaln(b / 2) + 0.5 * p * math.log((nu_n + 2) / (4 * math.pi * nu_n * a))
    D_n = b * (nu_n + 2) / (2 * a * (nu_n + 1))
    return math.exp(log_r), D_n


def variance_bound(model, x):
    """Upper bound on the pseudo-posterior variance of ``f(x)``.

    The bound is ``R_n D_n^{-p/2} fvar(x) / |H_n|^{1/2}`` times
    ``1/(n(alpha+1)+1) + 1/n`` where ``fvar`` mixes t kernels with
    ``gamma_n - p + 2`` degrees of freedom and scales ``D_n Lambda_i``.
    """
    p, n = model.p, model.n
    hyper = model.hyper
    R_n, D_n = variance_constants(model.nu_n, model.gamma_n, p)
    X, single = as_points(x, p)
    df = model.gamma_n - p + 2
    terms = _t_mixture_logterms(model, X, df, D_n * predictive_factor(model))
    fvar = np.exp(logsumexp(terms, axis=1) - math.log(n))
    h2 = bandwidth_h2(hyper, p)
    coef = 1.0 / (n * (hyper.alpha + 1) + 1) + 1.0 / n
    bound = R_n * D_n ** (-p / 2) * fvar / h2 ** (p / 2) * coef
    if single:
        fvar, bound = fvar[0], bound[0]
    return VarianceDiagnostics(R_n, D_n, fvar, bound)


def functional_variance(model):
    """Exact pseudo-posterior variance of ``sqrt(n) * sum_i pi_i eta_i`` for ``p = 1``.

    ``v_i = gamma_n lambda_i^2 / ((nu_n + 1)(gamma_n - 2))`` with
    ``lambda_i^2 = (nu_n + 1) delta_i^2 / nu_n`` and ``gamma_n delta_i^2 = psi_i``.
    """
    if model.p != 1:
        raise UnsupportedError("functional_variance is defined for univariate models only")
    gamma_n, nu_n, n = model.gamma_n, model.nu_n, model.n
    if gamma_n <= 2:
        raise InvalidParameterError(f"gamma_n must exceed 2, got {gamma_n}")
    lam2 = (nu_n + 1) / nu_n * model.psi[:, 0, 0] / gamma_n
    v = gamma_n * lam2 / ((nu_n + 1) * (gamma_n - 2))
    vbar = v.mean()
    mu = model.mu[:, 0]
    s2 = ((mu - mu.mean()) ** 2).mean()
    return float(vbar + (n * s2 + (n - 1) * vbar) / (n * (model.hyper.alpha + 1) + 1))


def weight_covariance(n, alpha):
    """Covariance matrix of ``Dirichlet(alpha + 1, ..., alpha + 1)`` weights of length ``n``."""
    V = (n - 1) / (n**2 * (n * (alpha + 1) + 1))
    C = -1.0 / (n - 1)
    return V * ((1 - C) * np.eye(n) + C * np.ones((n, n)))
