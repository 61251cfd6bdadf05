import math

import numpy as np
import pytest
from scipy import stats

from nndm import InvalidParameterError, NumericalError, fit
from nndm.evaluation import (
    DENSITIES,
    coverage_experiment,
    get_density,
    k_sweep,
    l1_error,
    l1_ratio,
    oosll,
    substream,
)

from oracles import trapezoid


# --- test densities ---------------------------------------------------------


@pytest.mark.parametrize("name,p", [("gs", 1), ("gs", 3), ("mg", 1), ("mg", 2), ("mg", 4), ("t", 1), ("t", 2), ("cw", 1)])
def test_sampler_moments(name, p):
    d = get_density(name, p)
    X = d.sample(40_000, substream(0, 9, p))
    assert X.shape == (40_000, p)
    se = np.sqrt(np.diag(d.cov) / X.shape[0])
    assert np.all(np.abs(X.mean(axis=0) - d.mean) < 4 * se)
    if name != "t":  # t with 10 df has a heavy fourth moment; checked via logpdf below
        var_se = np.sqrt(2 * np.diag(d.cov) ** 2 / X.shape[0]) * 3
        assert np.all(np.abs(X.var(axis=0) - np.diag(d.cov)) < 4 * var_se)


@pytest.mark.parametrize("name", ["gs", "mg", "t", "cw"])
def test_univariate_normalization(name):
    d = get_density(name, 1)
    grid = np.linspace(-40, 40, 400_001)
    assert trapezoid(d.pdf(grid), grid) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("name", ["gs", "mg", "t"])
def test_bivariate_normalization_mc(name):
    d = get_density(name, 2)
    rng = np.random.default_rng(1)
    box = 12.0
    U = rng.uniform(-box, box, (400_000, 2)) + d.mean
    est = d.pdf(U).mean() * (2 * box) ** 2
    assert est == pytest.approx(1.0, abs=2e-2)


def test_logpdf_matches_scipy():
    X = np.random.default_rng(2).standard_normal((10, 3))
    S = 0.8 * np.ones((3, 3)) + 0.2 * np.eye(3)
    np.testing.assert_allclose(get_density("gs", 3).logpdf(X), stats.multivariate_normal(np.zeros(3)).logpdf(X))
    ref = stats.multivariate_t(np.ones(3), S, df=10).logpdf(X)
    np.testing.assert_allclose(get_density("t", 3).logpdf(X), ref, rtol=1e-12)
    mg = np.logaddexp(
        np.log(0.4) + stats.multivariate_normal(-2 * np.ones(3), S).logpdf(X),
        np.log(0.6) + stats.multivariate_normal(2 * np.ones(3), S).logpdf(X),
    )
    np.testing.assert_allclose(get_density("mg", 3).logpdf(X), mg, rtol=1e-12)


def test_claw_sampler_ks():
    d = get_density("cw")
    x = d.sample(5000, substream(3, 9))[:, 0]
    w = np.array([0.5] + [0.1] * 5)
    m = np.array([0.0, -1, -0.5, 0, 0.5, 1])
    s = np.array([1.0] + [0.1] * 5)

    def cdf(t):
        return (w * stats.norm.cdf((np.asarray(t)[:, None] - m) / s)).sum(axis=1)

    assert stats.kstest(x, cdf).pvalue > 1e-3


def test_unknown_density_lists_options():
    with pytest.raises(InvalidParameterError, match="available"):
        get_density("sawtooth")
    with pytest.raises(InvalidParameterError):
        get_density("cw", 2)
    assert set(DENSITIES) == {"gs", "mg", "t", "cw"}


# --- L1 ---------------------------------------------------------------------


def test_l1_oracle_is_zero_and_double_is_one():
    d = get_density("mg", 2)
    rep = l1_error(d, n=20, n_t=50, R=3, estimator=lambda train: d.logpdf)
    assert np.all(rep.replicates == 0.0) and rep.mean == 0.0
    rep2 = l1_error(d, n=20, n_t=50, R=3, estimator=lambda train: lambda x: d.logpdf(x) + math.log(2))
    np.testing.assert_allclose(rep2.replicates, 1.0, rtol=1e-14)
    assert l1_ratio([0.0, 0.0], [0.0, 0.0]) == 0.0


def test_l1_deterministic_and_thread_invariant():
    d = get_density("gs")
    a = l1_error(d, n=60, n_t=100, R=4, seed=5)
    b = l1_error(d, n=60, n_t=100, R=4, seed=5, n_jobs=3)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    assert a.to_dict()["mean_l1"] == a.mean and a.se > 0


def test_l1_records_failures():
    d = get_density("gs")

    def flaky(train):
        if train[0, 0] > 0:
            raise NumericalError("boom")
        return d.logpdf

    rep = l1_error(d, n=10, n_t=10, R=8, seed=0, estimator=flaky)
    assert len(rep.failures) == np.isnan(rep.replicates).sum() > 0
    assert rep.mean == 0.0


# --- OOSLL ------------------------------------------------------------------


def test_oosll_single_kernel_mode():
    X = np.array([[0.0, 0.0], [1.0, 0.5], [0.2, 1.0]])
    m = fit(X, k=3)
    mode = m.mu[0]
    assert oosll(m, mode[None]) == pytest.approx(float(m.logpdf(mode)), rel=1e-14)


def test_oosll_duplication_and_floor():
    m = fit(np.random.default_rng(0).standard_normal(50))
    T = np.random.default_rng(1).standard_normal((30, 1))
    assert oosll(m, np.vstack([T, T])) == pytest.approx(oosll(m, T), rel=1e-14)
    value, floored = oosll(m, np.array([[0.0], [1e200]]), return_floored=True)
    assert floored == 1 and np.isfinite(value)
    with pytest.raises(InvalidParameterError):
        oosll(m, np.zeros((3, 2)))


def test_oosll_below_oracle():
    d = get_density("gs")
    vals, gaps = [], []
    for r in range(5):
        train = d.sample(200, substream(0, 1, r))
        test = d.sample(500, substream(0, 2, r))
        m = fit(train, delta0sq="cv")
        gaps.append(d.logpdf(test).mean() - oosll(m, test))
    gaps = np.array(gaps)
    se = gaps.std(ddof=1) / math.sqrt(gaps.size)
    assert gaps.mean() > -3 * se and gaps.mean() < 0.2


# --- coverage ---------------------------------------------------------------


def _pivot_intervals(density, z):
    def build(train, points, seed):
        truth = density.pdf(points)
        e = np.random.default_rng(seed).standard_normal(truth.size)
        return truth + e - z, truth + e + z

    return build


def test_coverage_harness_extremes():
    d = get_density("gs")
    wide = coverage_experiment(d, n=10, n_t=20, R_cov=3, intervals=lambda t, x, s: (np.full(len(x), -np.inf), np.full(len(x), np.inf)))
    assert wide.coverage == 1.0
    zero = coverage_experiment(d, n=10, n_t=20, R_cov=3, intervals=lambda t, x, s: (np.zeros(len(x)), np.zeros(len(x))))
    assert zero.coverage == 0.0 and zero.length == 0.0


def test_coverage_harness_nominal():
    d = get_density("gs")
    level = 0.9
    rep = coverage_experiment(d, n=10, n_t=200, R_cov=20, level=level, intervals=_pivot_intervals(d, stats.norm.ppf(0.95)))
    se = math.sqrt(level * (1 - level) / (200 * 20))
    assert abs(rep.coverage - level) < 3 * se


def test_coverage_small_nndm_run():
    rep = coverage_experiment(get_density("gs"), n=100, n_t=20, R_cov=2, M=100, seed=3)
    assert 0 <= rep.coverage <= 1 and rep.length > 0 and not rep.failures
    assert rep.to_dict()["R_cov"] == 2
    with pytest.raises(InvalidParameterError):
        coverage_experiment(get_density("gs"), level=1.0)


# --- k sweep ----------------------------------------------------------------


def test_k_sweep_shape_and_determinism():
    d = get_density("gs")
    t1 = k_sweep(d, n=40, n_t=30, k_values=[4], reps=2, seed=1)
    assert len(t1.rows()) == 1
    t2 = k_sweep(d, n=40, n_t=30, k_values=[4], reps=2, seed=1, n_jobs=2)
    np.testing.assert_array_equal(t1.per_rep, t2.per_rep)
    with pytest.raises(InvalidParameterError):
        k_sweep(d, k_values=[1, 5])


def test_k_sweep_heavy_tail_robust():
    d = get_density("t", 1)
    tab = k_sweep(d, n=200, n_t=500, k_values=[5, 10, 20, 30], reps=3, seed=2)
    spread = tab.mean_oosll.max() - tab.mean_oosll.min()
    assert spread < 0.1 * abs(tab.mean_oosll).mean()
