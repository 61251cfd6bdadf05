"""Two-class plug-in Bayes classifier built from per-class NN-DM densities."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .estimator import fit
from .exceptions import InvalidDataError, InvalidParameterError
from .neighbors import as_dataset
from .posterior import as_points

LOG_TINY = math.log(np.finfo(float).tiny)


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    class_models: tuple
    priors: tuple
    prior_source: str = "train-prevalence"
    center: np.ndarray = None
    scale: np.ndarray = None

    @property
    def p(self):
        return self.class_models[0].p

    def transform(self, X):
        if self.center is None:
            return X
        return (X - self.center) / self.scale


def _labels(y):
    y = np.asarray(y).ravel()
    uniq = set(np.unique(y).tolist())
    if not uniq <= {0, 1}:
        raise InvalidDataError(f"labels must be 0/1, got values {sorted(uniq)[:5]}")
    return y.astype(int)


def fit_classifier(X, y, options=None, priors=None, standardize=False, **kwargs):
    """Fit one density per class.

    ``priors`` is ``(pi_0, pi_1)``; by default the training prevalence is used.
    With ``standardize`` the features are centered and scaled by the pooled
    training mean and SD before fitting, and the same map is applied at
    prediction time.
    """
    X = as_dataset(X)
    y = _labels(y)
    if y.size != X.shape[0]:
        raise InvalidDataError(f"{X.shape[0]} feature rows but {y.size} labels")
    if np.unique(y).size < 2:
        raise InvalidDataError("training data must contain both classes")
    center = scale = None
    if standardize:
        center = X.mean(axis=0)
        scale = X.std(axis=0, ddof=1)
        if np.any(scale <= 0):
            raise InvalidDataError("cannot standardize a constant feature")
        X = (X - center) / scale
    models = tuple(fit(X[y == c], options, **kwargs) for c in (0, 1))
    if priors is None:
        pi1 = float(y.mean())
        priors, source = (1.0 - pi1, pi1), "train-prevalence"
    else:
        pi0, pi1 = (float(v) for v in priors)
        if pi0 < 0 or pi1 < 0 or not math.isclose(pi0 + pi1, 1.0, abs_tol=1e-12):
            raise InvalidParameterError(f"priors must be non-negative and sum to 1, got {priors}")
        priors, source = (1.0 - pi1, pi1), "user-supplied"
    return ClassifierModel(models, priors, source, center, scale)


def bayes_rule(log_f0, log_f1, priors):
    """Posterior probability of class 1 from class log-densities.

    Returns ``(prob, flags)``; ``flags`` marks points where both densities
    underflow (log density below that of the smallest positive double), for
    which the prior of class 1 is returned.
    """
    log_f0 = np.asarray(log_f0, dtype=float)
    log_f1 = np.asarray(log_f1, dtype=float)
    pi0, pi1 = priors
    with np.errstate(divide="ignore", invalid="ignore"):
        l0 = log_f0 + (math.log(pi0) if pi0 > 0 else -math.inf)
        l1 = log_f1 + (math.log(pi1) if pi1 > 0 else -math.inf)
        prob = np.exp(l1 - np.logaddexp(l0, l1))
    flags = (log_f0 < LOG_TINY) & (log_f1 < LOG_TINY)
    prob = np.where(flags, pi1, prob)
    prob = np.where(np.isnan(prob), pi1, prob)
    return np.clip(prob, 0.0, 1.0), flags


def _draw_seeds(seed):
    s0, s1 = np.random.SeedSequence(int(seed)).generate_state(2)
    return int(s0), int(s1)


def predict_proba(model, x, mode="mean", M=100, seed=0, return_flags=False):
    """Probability that ``x`` belongs to class 1.

    ``mode="mean"`` plugs the closed-form mean densities into Bayes' rule and
    returns shape ``(m,)``.  ``mode="draws"`` pairs draw ``t`` of the class-0
    model with draw ``t`` of the class-1 model and returns ``(M, m)``.
    """
    X, single = as_points(x, model.p)
    X = model.transform(X)
    m0, m1 = model.class_models
    if mode == "mean":
        prob, flags = bayes_rule(m0.logpdf(X), m1.logpdf(X), model.priors)
        if single:
            prob, flags = prob[0], flags[0]
    elif mode == "draws":
        s0, s1 = _draw_seeds(seed)
        with np.errstate(divide="ignore"):
            lf0 = m0.sample(M, s0).log_evaluate(X)
            lf1 = m1.sample(M, s1).log_evaluate(X)
        prob, flags = bayes_rule(lf0, lf1, model.priors)
        if single:
            prob, flags = prob[:, 0], flags[:, 0]
    else:
        raise InvalidParameterError(f"mode must be 'mean' or 'draws', got {mode!r}")
    return (prob, flags) if return_flags else prob


def predict_proba_both(model, x, **kwargs):
    """Columns ``(pr(y=0|x), pr(y=1|x))``; the first is ``1 - `` the second by construction."""
    p1 = np.atleast_1d(predict_proba(model, x, **kwargs))
    return np.stack([1.0 - p1, p1], axis=-1)


def brier_score(prob_draws, labels):
    """Normalized Brier score ``|p_t - y|^2 / n_t`` per draw, and their mean."""
    P = np.atleast_2d(np.asarray(prob_draws, dtype=float))
    y = np.asarray(labels, dtype=float).ravel()
    if P.shape[1] != y.size:
        raise InvalidParameterError(f"{P.shape[1]} probabilities per draw but {y.size} labels")
    per_draw = ((P - y[None, :]) ** 2).mean(axis=1)
    return per_draw, float(per_draw.mean())


@dataclass(frozen=True)
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(scores, labels):
    """ROC curve at every distinct score threshold and the rank-based AUC (ties averaged)."""
    s = np.asarray(scores, dtype=float).ravel()
    y = _labels(labels)
    if s.size != y.size:
        raise InvalidParameterError(f"{s.size} scores but {y.size} labels")
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise InvalidDataError("ROC analysis needs both classes present")
    ranks = rankdata(s, method="average")
    auc = (ranks[y == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0)
    thresholds = np.unique(s)[::-1]
    tp = np.array([(s[y == 1] >= t).sum() for t in thresholds])
    fp = np.array([(s[y == 0] >= t).sum() for t in thresholds])
    tpr = np.concatenate([[0.0], tp / n1])
    fpr = np.concatenate([[0.0], fp / n0])
    return RocResult(fpr=fpr, tpr=tpr, thresholds=np.concatenate([[np.inf], thresholds]), auc=float(auc))


def sensitivity_specificity(prob, labels, threshold=0.5):
    prob = np.asarray(prob, dtype=float).ravel()
    y = _labels(labels)
    pred = (prob >= threshold).astype(int)
    pos, neg = y == 1, y == 0
    sens = float((pred[pos] == 1).mean()) if pos.any() else math.nan
    spec = float((pred[neg] == 0).mean()) if neg.any() else math.nan
    return sens, spec
