"""Prior hyperparameters, their defaults, the implied bandwidth and the choice of alpha."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DegenerateDataError, InvalidParameterError
from .neighbors import as_dataset

DEFAULT_NU0 = 0.001
DEFAULT_DELTA0SQ = 1.0
MULTIVARIATE_K = 10


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    """Normal-inverse-Wishart prior shared by all neighborhoods, plus ``alpha`` and ``k``.

    ``psi0`` defaults to ``(gamma0 - p + 1) * delta0sq * I``.  When a custom
    ``psi0`` is supplied, ``delta0sq`` is still used by the bandwidth and the
    alpha rule.
    """

    mu0: np.ndarray
    nu0: float
    gamma0: float
    delta0sq: float
    k: int
    alpha: float = 0.0
    psi0: np.ndarray = field(default=None)

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float)).copy()
        p = mu0.size
        if self.psi0 is None:
            psi0 = (self.gamma0 - p + 1) * self.delta0sq * np.eye(p)
        else:
            psi0 = np.array(self.psi0, dtype=float, ndmin=2)
        if psi0.shape != (p, p):
            raise InvalidParameterError(f"psi0 must be {p}x{p}, got {psi0.shape}")
        if not self.nu0 > 0:
            raise InvalidParameterError(f"nu0 must be positive, got {self.nu0}")
        if not self.gamma0 > p - 1:
            raise InvalidParameterError(f"gamma0 must exceed p - 1 = {p - 1}, got {self.gamma0}")
        if not self.delta0sq > 0:
            raise InvalidParameterError(f"delta0sq must be positive, got {self.delta0sq}")
        if not self.alpha >= 0:
            raise InvalidParameterError(f"alpha must be non-negative, got {self.alpha}")
        if int(self.k) != self.k or self.k < 1:
            raise InvalidParameterError(f"k must be a positive integer, got {self.k}")
        if not np.allclose(psi0, psi0.T) or np.linalg.eigvalsh(psi0)[0] <= 0:
            raise InvalidParameterError("psi0 must be symmetric positive definite")
        mu0.setflags(write=False)
        psi0.setflags(write=False)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "psi0", psi0)
        object.__setattr__(self, "k", int(self.k))
        for name in ("nu0", "gamma0", "delta0sq", "alpha"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def p(self):
        return self.mu0.size

    @property
    def nu_n(self):
        return self.nu0 + self.k

    @property
    def gamma_n(self):
        return self.gamma0 + self.k

    def with_delta0sq(self, delta0sq):
        """Copy with a new ``delta0sq`` and the isotropic ``psi0`` it implies."""
        return replace(self, delta0sq=float(delta0sq), psi0=None)

    def with_alpha(self, alpha):
        return replace(self, alpha=float(alpha))

    def with_k(self, k):
        return replace(self, k=int(k))

    def __eq__(self, other):
        if not isinstance(other, Hyperparameters):
            return NotImplemented
        return (
            np.array_equal(self.mu0, other.mu0)
            and np.array_equal(self.psi0, other.psi0)
            and (self.nu0, self.gamma0, self.delta0sq, self.k, self.alpha)
            == (other.nu0, other.gamma0, other.delta0sq, other.k, other.alpha)
        )


def default_k(n, p):
    """``floor(n^(1/3)) + 1`` neighbors for univariate data, 10 otherwise, at most ``n - 1``."""
    if p == 1:
        # integer cube root, robust to float error at perfect cubes
        r = int(round(n ** (1.0 / 3.0)))
        while r**3 > n:
            r -= 1
        while (r + 1) ** 3 <= n:
            r += 1
        k = r + 1
    else:
        k = MULTIVARIATE_K
    return max(2, min(k, n - 1))


def default_hyperparameters(n, p):
    """Default prior: ``mu0 = 0``, ``nu0 = 0.001``, ``gamma0 = p``, ``psi0 = I``, ``alpha = 0``."""
    if n < 3:
        raise InvalidParameterError(f"need at least 3 observations, got n={n}")
    if p < 1:
        raise InvalidParameterError(f"p must be positive, got {p}")
    return Hyperparameters(
        mu0=np.zeros(p),
        nu0=DEFAULT_NU0,
        gamma0=float(p),
        delta0sq=DEFAULT_DELTA0SQ,
        k=default_k(n, p),
    )


def bandwidth_h2(hyper, p=None):
    """Squared bandwidth ``h_n^2`` implied by the prior scale and the neighborhood size."""
    p = hyper.p if p is None else p
    nu_n = hyper.nu_n
    df = hyper.gamma_n - p + 1
    if df <= 0:
        raise InvalidParameterError(f"gamma_n - p + 1 must be positive, got {df}")
    return (nu_n + 1) * (hyper.gamma0 - p + 1) * hyper.delta0sq / (nu_n * df)


def choose_alpha(data, hyper):
    """Data-driven Dirichlet concentration.

    For ``p = 1`` this is ``gamma0 * delta0sq / (s^2 * gamma_n * nu_n)`` with
    ``s^2`` the unbiased sample variance.  For ``p >= 2`` it is the tentative
    multivariate rule ``|H_n| / (nu_n |S|)`` with ``S`` the sample covariance;
    treat that one as a heuristic.
    """
    X = as_dataset(data)
    n, p = X.shape
    if n < 2:
        raise InvalidParameterError("choose_alpha needs at least 2 observations")
    if p != hyper.p:
        raise InvalidParameterError(f"data has p={p}, hyperparameters have p={hyper.p}")
    if p == 1:
        var = float(np.var(X[:, 0], ddof=1))
        if not var > 0:
            raise DegenerateDataError("sample variance is zero")
        return hyper.gamma0 * hyper.delta0sq / (var * hyper.gamma_n * hyper.nu_n)
    sign, logdet = np.linalg.slogdet(np.cov(X, rowvar=False))
    if sign <= 0 or not np.isfinite(logdet):
        raise DegenerateDataError("sample covariance is singular")
    log_h = p * math.log(bandwidth_h2(hyper, p))
    return math.exp(log_h - logdet) / hyper.nu_n
