"""Leave-one-out cross-validation of the prior scale ``delta0sq``.

The leave-one-out density at ``X_i`` averages, over ``j != i``, the
predictive t kernel of the ``k``-neighborhood of ``X_j`` in the data without
``X_i``.  Those neighborhoods come from :class:`~nndm.neighbors.LooStats`, so
the whole criterion is computed from one ``(k+1)``-neighbor pass.

Since ``psi_0 = s I`` with ``s = (gamma0 - p + 1) delta0sq``, every
posterior scale is ``A_j + s I`` with ``A_j`` independent of ``delta0sq``.
Diagonalizing each ``A_j`` once makes every grid candidate an ``O(n^2 p)``
pass.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import CVFailureError, InvalidParameterError
from .neighbors import as_dataset, build_loo_stats

log = logging.getLogger(__name__)

DEFAULT_GRID = np.logspace(-3, 2, 25)

_EVAL_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class CvResult:
    grid: np.ndarray
    scores: np.ndarray
    best: float

    @property
    def best_score(self):
        return float(np.nanmax(self.scores))


def _eig_stats(means, scatters, hyper):
    """Posterior locations and eigen-decompositions of ``psi - psi_0``."""
    k, nu0, nu_n = hyper.k, hyper.nu0, hyper.nu_n
    mu = (nu0 * hyper.mu0 + k * means) / nu_n
    d = means - hyper.mu0
    A = scatters + (k * nu0 / nu_n) * (d[..., :, None] * d[..., None, :])
    evals, evecs = np.linalg.eigh(A)
    # A is PSD; clip round-off so that A + s I stays positive for every s > 0
    return mu, np.clip(evals, 0.0, None), evecs


class _LooCriterion:
    """Precomputed pieces of the leave-one-out log-likelihood for one ``k``."""

    def __init__(self, X, hyper):
        self.hyper = hyper
        n, p = X.shape
        k = hyper.k
        loo = build_loo_stats(X, k)
        self.n, self.p = n, p

        # k-neighborhoods of the full data: valid for X_j whenever X_i is not a member
        base_means, base_scatters = loo.drop_position(k)
        mu, evals, evecs = _eig_stats(base_means, base_scatters, hyper)
        self.base_evals = evals
        self.base_z2 = np.empty((n, n, p))
        step = max(1, _EVAL_ELEMENTS // (n * p))
        for s in range(0, n, step):
            diff = X[s : s + step, None, :] - mu[None, :, :]
            self.base_z2[s : s + step] = np.einsum("jpq,ijp->ijq", evecs, diff) ** 2

        # X_i at position r < k of N_j: replace entry (i, j) with the drop-X_i statistics
        rows, cols, evs, z2s = [], [], [], []
        for r in range(1, k):
            i = loo.members[:, r]
            m_r, s_r = loo.drop_position(r)
            mu_r, ev_r, U_r = _eig_stats(m_r, s_r, hyper)
            z = np.einsum("jpq,jp->jq", U_r, X[i] - mu_r)
            rows.append(i)
            cols.append(np.arange(n))
            evs.append(ev_r)
            z2s.append(z**2)
        if rows:
            self.fix_rows = np.concatenate(rows)
            self.fix_cols = np.concatenate(cols)
            self.fix_evals = np.concatenate(evs)
            self.fix_z2 = np.concatenate(z2s)
        else:
            self.fix_rows = self.fix_cols = np.empty(0, dtype=np.intp)
            self.fix_evals = self.fix_z2 = np.empty((0, p))

    def _logt(self, evals, z2, s):
        p = self.p
        df = self.hyper.gamma_n - p + 1
        c = (self.hyper.nu_n + 1) / (self.hyper.nu_n * df)
        lam = c * (evals + s)
        logdet = np.log(lam).sum(axis=-1)
        q = (z2 / lam[..., :]).sum(axis=-1)
        logc = gammaln((df + p) / 2) - gammaln(df / 2) - 0.5 * p * math.log(df * math.pi)
        return logc - 0.5 * logdet - 0.5 * (df + p) * np.log1p(q / df)

    def score(self, delta0sq):
        hyper = self.hyper
        s = (hyper.gamma0 - self.p + 1) * delta0sq
        L = self._logt(self.base_evals[None, :, :], self.base_z2, s)
        if self.fix_rows.size:
            L[self.fix_rows, self.fix_cols] = self._logt(self.fix_evals, self.fix_z2, s)
        np.fill_diagonal(L, -np.inf)
        loo = logsumexp(L, axis=1) - math.log(self.n - 1)
        return float(loo.mean())


def loo_log_likelihood(data, hyper, grid):
    """Mean leave-one-out log density for every ``delta0sq`` in ``grid``."""
    X = as_dataset(data)
    crit = _LooCriterion(X, hyper)
    return np.array([crit.score(float(d)) for d in grid])


def cv_delta0(data, k, base, grid=None):
    """Pick ``delta0sq`` maximizing the leave-one-out log-likelihood.

    Parameters
    ----------
    data : array_like, shape (n, p)
    k : int
        Neighborhood size; needs ``k + 1 <= n``.
    base : Hyperparameters
        Supplies ``mu0``, ``nu0`` and ``gamma0``; its ``delta0sq`` is ignored.
    grid : sequence of float, optional
        Positive candidates, default 25 log-spaced values over ``[1e-3, 1e2]``.

    Candidates with a non-finite score are dropped with a warning.  Ties go to
    the smallest candidate so the result does not depend on grid order.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise InvalidParameterError("the delta0sq grid is empty")
    if np.any(~(grid > 0)) or not np.all(np.isfinite(grid)):
        raise InvalidParameterError("delta0sq candidates must be positive and finite")
    hyper = base.with_k(k)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        scores = loo_log_likelihood(data, hyper, grid)
    ok = np.isfinite(scores)
    if not ok.all():
        log.warning("dropping delta0sq candidates with non-finite score: %s", grid[~ok].tolist())
    if not ok.any():
        raise CVFailureError("every delta0sq candidate produced a non-finite score")
    best_score = scores[ok].max()
    best = float(grid[ok & (scores == best_score)].min())
    return CvResult(grid=grid, scores=np.where(ok, scores, np.nan), best=best)
