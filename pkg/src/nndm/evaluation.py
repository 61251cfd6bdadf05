"""Synthetic test densities and the evaluation protocols built on them.

Randomness layout: every experiment takes one root ``seed``.  Replicate ``r``
draws its training data from substream ``(TRAIN, r)``, its test data (when
per-replicate) from ``(TEST, r)`` and its Monte Carlo draws from
``(DRAWS, r)``.  Fixed test sets shared by all replicates come from
``(TEST, FIXED)``.  Results therefore do not depend on execution order or on
the number of worker threads.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .estimator import FitOptions, fit
from .exceptions import InvalidParameterError, NNDMError
from .hyper import default_k
from .neighbors import as_dataset
from .posterior import quantile_band

TRAIN, TEST, DRAWS = 1, 2, 3
FIXED = 2**31 - 1

LOG_FLOOR = math.log(np.finfo(float).tiny)


def substream(seed, stream, index=0):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def substream_seed(seed, stream, index=0):
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index))).generate_state(1)[0])


def equicorrelation(p, rho=0.8):
    return rho * np.ones((p, p)) + (1 - rho) * np.eye(p)


def _gauss_logpdf(X, mean, cov):
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, (X - mean).T)
    p = X.shape[1]
    return -0.5 * p * math.log(2 * math.pi) - np.log(np.diag(L)).sum() - 0.5 * (z * z).sum(axis=0)


@dataclass(frozen=True)
class TestDensity:
    """A known density: its name, dimension, sampler and exact log density."""

    __test__ = False  # not a pytest class

    name: str
    p: int
    sampler: object = field(repr=False)
    log_density: object = field(repr=False)
    mean: np.ndarray = field(default=None, repr=False)
    cov: np.ndarray = field(default=None, repr=False)

    def sample(self, n, rng):
        return self.sampler(int(n), rng)

    def logpdf(self, x):
        return self.log_density(as_dataset(x))

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def gaussian(p=1):
    """Standard normal in ``p`` dimensions (GS)."""

    def sampler(n, rng):
        return rng.standard_normal((n, p))

    def logpdf(X):
        return -0.5 * p * math.log(2 * math.pi) - 0.5 * (X**2).sum(axis=1)

    return TestDensity("gs", p, sampler, logpdf, np.zeros(p), np.eye(p))


def gaussian_mixture(p=2, rho=0.8):
    """``0.4 N(-2 1, S) + 0.6 N(2 1, S)`` with equicorrelation ``S`` (MG)."""
    S = equicorrelation(p, rho)
    L = np.linalg.cholesky(S)
    m1, m2 = -2.0 * np.ones(p), 2.0 * np.ones(p)

    def sampler(n, rng):
        first = rng.random(n) < 0.4
        z = rng.standard_normal((n, p)) @ L.T
        return z + np.where(first[:, None], m1, m2)

    def logpdf(X):
        return np.logaddexp(
            math.log(0.4) + _gauss_logpdf(X, m1, S), math.log(0.6) + _gauss_logpdf(X, m2, S)
        )

    mean = 0.4 * m1 + 0.6 * m2
    d = m2 - m1
    cov = S + 0.4 * 0.6 * np.outer(d, d)
    return TestDensity("mg", p, sampler, logpdf, mean, cov)


def student_t(p=2, df=10.0, rho=0.8):
    """Multivariate t with ``df`` degrees of freedom, location ``1_p`` and scale ``S`` (T)."""
    S = equicorrelation(p, rho)
    L = np.linalg.cholesky(S)
    loc = np.ones(p)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    logc = gammaln((df + p) / 2) - gammaln(df / 2) - 0.5 * p * math.log(df * math.pi) - 0.5 * logdet

    def sampler(n, rng):
        z = rng.standard_normal((n, p)) @ L.T
        w = rng.chisquare(df, size=n) / df
        return loc + z / np.sqrt(w)[:, None]

    def logpdf(X):
        y = np.linalg.solve(L, (X - loc).T)
        return logc - 0.5 * (df + p) * np.log1p((y * y).sum(axis=0) / df)

    return TestDensity("t", p, sampler, logpdf, loc, S * df / (df - 2))


_CLAW_MEANS = np.array([j / 2 - 1 for j in range(5)])


def claw():
    """Marron-Wand claw: ``N(0, 1) / 2 + sum_j N(j/2 - 1, 0.1^2) / 10`` (CW)."""
    means = np.concatenate([[0.0], _CLAW_MEANS])
    sds = np.concatenate([[1.0], np.full(5, 0.1)])
    weights = np.concatenate([[0.5], np.full(5, 0.1)])

    def sampler(n, rng):
        comp = rng.choice(6, size=n, p=weights)
        return (means[comp] + sds[comp] * rng.standard_normal(n))[:, None]

    def logpdf(X):
        x = X[:, 0][:, None]
        terms = np.log(weights) - np.log(sds) - 0.5 * math.log(2 * math.pi) - 0.5 * ((x - means) / sds) ** 2
        return logsumexp(terms, axis=1)

    mean = float(weights @ means)
    var = float(weights @ (sds**2 + means**2)) - mean**2
    return TestDensity("cw", 1, sampler, logpdf, np.array([mean]), np.array([[var]]))


DENSITIES = {
    "gs": gaussian,
    "mg": gaussian_mixture,
    "t": student_t,
    "cw": lambda p=1: claw() if p == 1 else _bad_dim("cw", p),
}


def _bad_dim(name, p):
    raise InvalidParameterError(f"density {name!r} is only defined for p = 1, got p={p}")


def get_density(name, p=1):
    """Look up a built-in test density by (case-insensitive) name."""
    key = name.lower()
    if key not in DENSITIES:
        raise InvalidParameterError(f"unknown density {name!r}; available: {', '.join(sorted(DENSITIES))}")
    return DENSITIES[key](p)


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _default_estimator(fit_options):
    def estimator(train):
        return fit(train, fit_options).logpdf

    return estimator


@dataclass(frozen=True)
class L1Report:
    density: str
    n: int
    n_t: int
    R: int
    seed: int
    replicates: np.ndarray
    failures: tuple = ()

    @property
    def mean(self):
        ok = np.isfinite(self.replicates)
        return float(self.replicates[ok].mean()) if ok.any() else math.nan

    @property
    def se(self):
        ok = self.replicates[np.isfinite(self.replicates)]
        return float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else math.nan

    def to_dict(self):
        return {
            "density": self.density,
            "n": self.n,
            "n_t": self.n_t,
            "R": self.R,
            "seed": self.seed,
            "mean_l1": self.mean,
            "se_l1": self.se,
            "replicates": [None if not np.isfinite(v) else float(v) for v in self.replicates],
            "failures": list(self.failures),
        }


def l1_ratio(log_fhat, log_f0):
    """Mean of ``|fhat / f0 - 1|`` over test points, computed from log densities."""
    return float(np.mean(np.abs(np.expm1(np.asarray(log_fhat) - np.asarray(log_f0)))))


def l1_error(density, fit_options=None, n=200, n_t=500, R=20, seed=0, estimator=None, n_jobs=None):
    """Monte Carlo estimate of the expected L1 distance between estimate and truth.

    ``estimator`` maps a training sample to a log-density callable; it
    defaults to NN-DM fitted with ``fit_options`` (by default the univariate /
    multivariate default ``k`` with cross-validated ``delta0sq``).
    """
    if R < 1 or n_t < 1:
        raise InvalidParameterError("need R >= 1 and n_t >= 1")
    if estimator is None:
        estimator = _default_estimator(fit_options or FitOptions(delta0sq="cv"))

    def replicate(r):
        train = density.sample(n, substream(seed, TRAIN, r))
        test = density.sample(n_t, substream(seed, TEST, r))
        try:
            logf = estimator(train)
            return l1_ratio(logf(test), density.logpdf(test)), None
        except NNDMError as exc:
            return math.nan, f"replicate {r}: {exc}"

    results = _map(replicate, range(R), n_jobs)
    values = np.array([v for v, _ in results])
    failures = tuple(msg for _, msg in results if msg)
    return L1Report(density.name, n, n_t, R, int(seed), values, failures)


def oosll(model, test, return_floored=False):
    """Mean out-of-sample log density of ``test`` under the pseudo-posterior mean.

    Log densities below the smallest positive double are floored there; the
    number of floored points is returned when ``return_floored`` is set.
    """
    X = as_dataset(test)
    if X.shape[1] != model.p:
        raise InvalidParameterError(f"test data has p={X.shape[1]}, model has p={model.p}")
    logf = np.asarray(model.logpdf(X))
    floored = int((logf < LOG_FLOOR).sum())
    value = float(np.maximum(logf, LOG_FLOOR).mean())
    return (value, floored) if return_floored else value


@dataclass(frozen=True)
class CoverageReport:
    density: str
    n: int
    n_t: int
    R_cov: int
    level: float
    seed: int
    coverage_per_rep: np.ndarray
    length_per_rep: np.ndarray
    failures: tuple = ()

    @property
    def coverage(self):
        return float(np.nanmean(self.coverage_per_rep))

    @property
    def length(self):
        return float(np.nanmean(self.length_per_rep))

    def to_dict(self):
        return {
            "density": self.density,
            "n": self.n,
            "n_t": self.n_t,
            "R_cov": self.R_cov,
            "level": self.level,
            "seed": self.seed,
            "coverage": self.coverage,
            "length": self.length,
            "failures": list(self.failures),
        }


def nndm_intervals(k, level, M=1000, delta0sq="cv", alpha="auto"):
    """Interval builder: fit NN-DM and return the pointwise credible band."""

    def build(train, points, draw_seed):
        model = fit(train, FitOptions(k=k, delta0sq=delta0sq, alpha=alpha, seed=draw_seed))
        band = quantile_band(model.sample(M, draw_seed).evaluate(points), level)
        return band.lo, band.hi

    return build


def coverage_experiment(
    density, n=500, n_t=200, R_cov=50, k=None, level=0.95, seed=0, M=1000, intervals=None, n_jobs=None
):
    """Frequentist coverage of pointwise credible intervals at fixed test points.

    ``intervals(train, points, draw_seed) -> (lo, hi)`` builds the intervals;
    by default NN-DM with cross-validated ``delta0sq`` and data-driven alpha.
    """
    if not 0.0 < level < 1.0:
        raise InvalidParameterError(f"level must lie in (0, 1), got {level}")
    if intervals is None:
        intervals = nndm_intervals(k or default_k(n, density.p), level, M)
    points = density.sample(n_t, substream(seed, TEST, FIXED))
    truth = density.pdf(points)

    def replicate(r):
        train = density.sample(n, substream(seed, TRAIN, r))
        try:
            lo, hi = intervals(train, points, substream_seed(seed, DRAWS, r))
        except NNDMError as exc:
            return math.nan, math.nan, f"replicate {r}: {exc}"
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        covered = (lo <= truth) & (truth <= hi)
        with np.errstate(invalid="ignore"):
            length = float(np.mean(hi - lo))
        return float(covered.mean()), length, None

    results = _map(replicate, range(R_cov), n_jobs)
    cov = np.array([c for c, _, _ in results])
    length = np.array([ln for _, ln, _ in results])
    failures = tuple(msg for _, _, msg in results if msg)
    return CoverageReport(density.name, n, n_t, R_cov, float(level), int(seed), cov, length, failures)


@dataclass(frozen=True)
class KSweepTable:
    k: np.ndarray
    mean_oosll: np.ndarray
    per_rep: np.ndarray  # (len(k), reps)

    def rows(self):
        return list(zip(self.k.tolist(), self.mean_oosll.tolist()))


def k_sweep(density, n=200, n_t=500, k_values=(2, 5, 10, 20), seed=0, reps=10, grid=None, n_jobs=None):
    """Out-of-sample log-likelihood on a fixed test set as a function of ``k``.

    For every ``k`` and replicate, ``delta0sq`` is cross-validated before fitting.
    """
    k_values = [int(k) for k in k_values]
    if not k_values or min(k_values) < 2:
        raise InvalidParameterError("k values must all be at least 2")
    test = density.sample(n_t, substream(seed, TEST, FIXED))

    def replicate(r):
        train = density.sample(n, substream(seed, TRAIN, r))
        return [oosll(fit(train, FitOptions(k=k, delta0sq="cv", cv_grid=grid)), test) for k in k_values]

    per_rep = np.array(_map(replicate, range(reps), n_jobs)).T
    return KSweepTable(np.array(k_values), per_rep.mean(axis=1), per_rep)
