import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nndm import InvalidDataError, InvalidParameterError, brier_score, fit_classifier, predict_proba, roc_auc
from nndm.classifier import bayes_rule, predict_proba_both, sensitivity_specificity


def _blobs(n=200, p=2, seed=0, shift=5.0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.standard_normal((n, p)) - shift, rng.standard_normal((n, p)) + shift])
    y = np.repeat([0, 1], n)
    return X, y


@pytest.fixture(scope="module")
def blobs_model():
    X, y = _blobs()
    return fit_classifier(X, y), X, y


def test_separable_blobs(blobs_model):
    model, X, y = blobs_model
    prob = predict_proba(model, X)
    assert ((prob >= 0.5) == y).mean() > 0.99
    assert sensitivity_specificity(prob, y) == (1.0, 1.0)
    assert model.priors == (0.5, 0.5) and model.prior_source == "train-prevalence"


def test_user_priors_override():
    X, y = _blobs(n=30)
    m = fit_classifier(X, y, priors=(0.9, 0.1))
    assert m.priors == pytest.approx((0.9, 0.1)) and m.prior_source == "user-supplied"
    with pytest.raises(InvalidParameterError):
        fit_classifier(X, y, priors=(0.9, 0.3))


def test_unbalanced_prevalence():
    X, y = _blobs(n=30)
    keep = np.r_[np.arange(30), np.arange(30, 40)]
    m = fit_classifier(X[keep], y[keep])
    assert m.priors == pytest.approx((0.75, 0.25))


def test_bad_labels():
    X, y = _blobs(n=10)
    with pytest.raises(InvalidDataError):
        fit_classifier(X, np.zeros(20))
    with pytest.raises(InvalidDataError):
        fit_classifier(X, y + 1)
    with pytest.raises(InvalidDataError):
        fit_classifier(X, y[:5])


def test_bayes_rule_arithmetic():
    prob, flags = bayes_rule(math.log(1.0), math.log(3.0), (0.25, 0.75))
    assert prob == pytest.approx(9 / 10, rel=1e-14) and not flags
    assert bayes_rule(-2.0, -2.0, (0.5, 0.5))[0] == pytest.approx(0.5)
    assert bayes_rule(-1.0, -np.inf, (0.5, 0.5))[0] == 0.0
    prob, flags = bayes_rule(-np.inf, -np.inf, (0.3, 0.7))
    assert prob == 0.7 and flags
    # both densities below the smallest positive double also count as underflow
    prob, flags = bayes_rule(-800.0, -750.0, (0.3, 0.7))
    assert prob == 0.7 and flags
    assert not bayes_rule(-800.0, -700.0, (0.3, 0.7))[1]


@settings(max_examples=50, deadline=None)
@given(
    # ranges keep every shifted log density above the underflow threshold
    l0=st.floats(-300, 50),
    l1=st.floats(-300, 50),
    pi1=st.floats(0.01, 0.99),
    shift=st.floats(-350, 350),
)
def test_bayes_rule_properties(l0, l1, pi1, shift):
    p, _ = bayes_rule(l0, l1, (1 - pi1, pi1))
    assert 0.0 <= p <= 1.0
    # a common log offset cancels
    q, _ = bayes_rule(l0 + shift, l1 + shift, (1 - pi1, pi1))
    assert q == pytest.approx(p, abs=1e-9)
    # more prior mass on class 1 never lowers its probability
    r, _ = bayes_rule(l0, l1, (1 - min(pi1 + 0.005, 1.0), min(pi1 + 0.005, 1.0)))
    assert r >= p - 1e-15


def test_complementarity_both_modes(blobs_model):
    model, X, _ = blobs_model
    pts = X[::37]
    for kwargs in ({"mode": "mean"}, {"mode": "draws", "M": 8, "seed": 2}):
        both = predict_proba_both(model, pts, **kwargs)
        np.testing.assert_array_equal(both[..., 0], 1.0 - both[..., 1])


def test_draws_mode_shape_and_determinism(blobs_model):
    model, X, _ = blobs_model
    a = predict_proba(model, X[:5], mode="draws", M=12, seed=4)
    b = predict_proba(model, X[:5], mode="draws", M=12, seed=4)
    assert a.shape == (12, 5)
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a <= 1))
    single = predict_proba(model, X[0], mode="draws", M=12, seed=4)
    np.testing.assert_allclose(single, a[:, 0], rtol=1e-12)
    with pytest.raises(InvalidParameterError):
        predict_proba(model, X[:2], mode="bogus")


def test_extrapolation_flag(blobs_model):
    model, _, _ = blobs_model
    far = np.array([[1e60, -1e60], [1e3, -1e3]])
    prob, flags = predict_proba(model, far, return_flags=True)
    assert flags.tolist() == [True, False]
    assert prob[0] == model.priors[1]


def test_standardize_round_trip():
    X, y = _blobs(n=40)
    X = X * [1.0, 1000.0]
    m = fit_classifier(X, y, standardize=True)
    np.testing.assert_allclose(m.transform(X).std(axis=0, ddof=1), 1.0)
    assert ((predict_proba(m, X) >= 0.5) == y).mean() > 0.99


# --- metrics ----------------------------------------------------------------


def test_brier_examples():
    y = np.array([0, 1, 1, 0])
    assert brier_score(y[None].astype(float), y)[1] == 0.0
    assert brier_score(np.full((3, 4), 0.5), y)[1] == pytest.approx(0.25)
    P = np.random.default_rng(1).random((5, 4))
    per, mean = brier_score(P, y)
    np.testing.assert_allclose(per, [np.sum((row - y) ** 2) / 4 for row in P])
    assert mean == pytest.approx(per.mean())
    with pytest.raises(InvalidParameterError):
        brier_score(P, y[:3])


def test_auc_examples():
    y = np.array([0, 0, 1, 1, 1])
    s = np.array([0.1, 0.2, 0.7, 0.8, 0.9])
    r = roc_auc(s, y)
    assert r.auc == 1.0
    assert roc_auc(-s, y).auc == 0.0
    s2 = np.array([0.3, 0.6, 0.2, 0.6, 0.9])
    assert roc_auc(-s2, y).auc == pytest.approx(1 - roc_auc(s2, y).auc)
    # ties count one half: pairs (0.3,0.2)=0 (0.3,.6)=1 (0.3,.9)=1 (0.6,.2)=0 (0.6,.6)=.5 (0.6,.9)=1
    assert roc_auc(s2, y).auc == pytest.approx(3.5 / 6)
    assert r.fpr[0] == 0 and r.tpr[-1] == 1 and r.fpr[-1] == 1
    with pytest.raises(InvalidDataError):
        roc_auc(s, np.ones(5))


def test_auc_null():
    rng = np.random.default_rng(3)
    n = 4000
    y = rng.integers(0, 2, n)
    auc = roc_auc(rng.random(n), y).auc
    n1 = y.sum()
    n0 = n - n1
    se = math.sqrt((n0 + n1 + 1) / (12 * n0 * n1))
    assert abs(auc - 0.5) < 3 * se


def test_auc_matches_pairwise_count():
    rng = np.random.default_rng(5)
    s = np.round(rng.random(60), 1)
    y = rng.integers(0, 2, 60)
    pos, neg = s[y == 1], s[y == 0]
    pairs = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    assert roc_auc(s, y).auc == pytest.approx(pairs / (pos.size * neg.size), rel=1e-14)
