"""Exact k-nearest-neighbor neighborhoods and their sufficient statistics.

Every data point ``X_i`` owns a neighborhood made of itself followed by its
``k - 1`` nearest neighbors among the remaining points.  Distances are
Euclidean; ties are broken by increasing row index, compared with exact
floating-point equality on squared distances.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidDataError, InvalidParameterError

# Rows are processed in blocks so the (block, n, p) difference tensor stays small.
_BLOCK_ELEMENTS = 1 << 22


def as_dataset(data):
    """Validate ``data`` and return it as a C-contiguous ``(n, p)`` float array.

    A 1-D input is read as ``n`` univariate observations.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidDataError(f"data must be an (n, p) matrix with n, p >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidDataError("data contains NaN or infinite entries")
    return np.ascontiguousarray(X)


def _sorted_members(X, m):
    """Indices of each point's ``m``-neighborhood, owner first, shape ``(n, m)``.

    Also returns the squared distance from each owner to its members.
    """
    n, p = X.shape
    members = np.empty((n, m), dtype=np.intp)
    sqdist = np.empty((n, m))
    block = max(1, _BLOCK_ELEMENTS // max(1, n * p))
    for start in range(0, n, block):
        rows = np.arange(start, min(n, start + block))
        diff = X[rows, None, :] - X[None, :, :]
        D = np.einsum("bnp,bnp->bn", diff, diff)
        # the owner always comes first, whatever other points coincide with it
        D[np.arange(rows.size), rows] = -1.0
        if m < n:
            part = np.argpartition(D, m - 1, axis=1)[:, :m]
            thresh = np.take_along_axis(D, part, axis=1).max(axis=1)
        else:
            thresh = np.full(rows.size, np.inf)
        for b, i in enumerate(rows):
            cand = np.flatnonzero(D[b] <= thresh[b])
            # cand is in index order, so a stable sort breaks ties by index
            order = cand[np.argsort(D[b, cand], kind="stable")[:m]]
            members[i] = order
            sqdist[i] = D[b, order]
        sqdist[rows, 0] = 0.0
    return members, sqdist


def _moments(X, members):
    """Per-neighborhood means ``(n, p)`` and symmetrized scatter matrices ``(n, p, p)``."""
    pts = X[members]
    means = pts.mean(axis=1)
    centered = pts - means[:, None, :]
    scatter = np.einsum("nki,nkj->nij", centered, centered)
    scatter = 0.5 * (scatter + np.swapaxes(scatter, 1, 2))
    return means, scatter


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class Neighborhood:
    """One point's neighborhood: its members, their mean and scatter, and radius."""

    owner: int
    members: np.ndarray
    mean: np.ndarray
    scatter: np.ndarray
    radius: float


@dataclass(frozen=True, eq=False)
class Neighborhoods:
    """All ``n`` neighborhoods of a dataset stored as stacked arrays.

    Indexing returns a :class:`Neighborhood`; iteration yields them in row order.
    """

    members: np.ndarray  # (n, k), owner in column 0
    means: np.ndarray  # (n, p)
    scatters: np.ndarray  # (n, p, p)
    radii: np.ndarray  # (n,)

    @property
    def n(self):
        return self.members.shape[0]

    @property
    def k(self):
        return self.members.shape[1]

    @property
    def p(self):
        return self.means.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return Neighborhood(
            owner=int(self.members[i, 0]),
            members=self.members[i],
            mean=self.means[i],
            scatter=self.scatters[i],
            radius=float(self.radii[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(self.n))


def build_neighborhoods(data, k):
    """Build the ``k``-point neighborhood of every observation.

    Parameters
    ----------
    data : array_like, shape (n, p) or (n,)
        Observations, one per row.
    k : int
        Neighborhood size including the owner, ``2 <= k <= n``.

    Returns
    -------
    Neighborhoods
    """
    X = as_dataset(data)
    n = X.shape[0]
    k = int(k)
    if k < 2 or k > n:
        raise InvalidParameterError(f"k must satisfy 2 <= k <= n (n={n}), got k={k}")
    members, sqdist = _sorted_members(X, k)
    means, scatters = _moments(X, members)
    radii = np.sqrt(sqdist[:, -1])
    _freeze(members, means, scatters, radii)
    return Neighborhoods(members, means, scatters, radii)


@dataclass(frozen=True, eq=False)
class LooStats:
    """Leave-one-out neighborhood statistics derived from ``(k+1)``-neighborhoods.

    For ``j != i`` the ``k``-neighborhood of ``X_j`` in the data without ``X_i``
    is the ``(k+1)``-neighborhood of ``X_j`` with either ``X_i`` removed (when
    ``X_i`` is a member) or its last member removed (otherwise).  Both cases are
    a single downdate of the stored mean and scatter; nothing is recomputed.

    ``scatters`` hold unnormalized sums of outer products about the mean.
    """

    data: np.ndarray
    members: np.ndarray  # (n, k+1)
    means: np.ndarray  # (n, p)
    scatters: np.ndarray  # (n, p, p)

    @property
    def n(self):
        return self.members.shape[0]

    @property
    def k(self):
        return self.members.shape[1] - 1

    def _downdate(self, j, x):
        k = self.k
        m = self.means[j]
        d = m - x
        mean = ((k + 1) * m - x) / k
        outer = d[..., :, None] * d[..., None, :]
        scatter = self.scatters[j] - ((k + 1) / k) * outer
        scatter = 0.5 * (scatter + np.swapaxes(scatter, -1, -2))
        return mean, scatter

    def drop_position(self, r):
        """Statistics of every neighborhood with its ``r``-th member removed.

        ``r`` ranges over ``1..k``; ``r = k`` is the last member and gives the
        plain ``k``-neighborhood of the full data.  Returns ``(means, scatters)``
        of shapes ``(n, p)`` and ``(n, p, p)``.
        """
        if not 1 <= r <= self.k:
            raise InvalidParameterError(f"position must be in 1..{self.k}, got {r}")
        j = np.arange(self.n)
        return self._downdate(j, self.data[self.members[:, r]])

    def excluded(self, j, i):
        """Mean and scatter of the ``k``-neighborhood of ``X_j`` once ``X_i`` is removed."""
        if i == j:
            raise InvalidParameterError("the excluded point cannot own the neighborhood")
        row = self.members[j]
        hit = np.flatnonzero(row[1:] == i)
        r = hit[0] + 1 if hit.size else self.k
        return self._downdate(j, self.data[row[r]])


def build_loo_stats(data, k):
    """Precompute the streaming leave-one-out statistics for neighborhood size ``k``."""
    X = as_dataset(data)
    n = X.shape[0]
    k = int(k)
    if k < 2:
        raise InvalidParameterError(f"k must be at least 2, got {k}")
    if k + 1 > n:
        raise InvalidParameterError(f"leave-one-out needs k + 1 <= n (n={n}), got k={k}")
    members, _ = _sorted_members(X, k + 1)
    means, scatters = _moments(X, members)
    _freeze(members, means, scatters)
    return LooStats(X, members, means, scatters)


def count_unique_members(neighborhoods):
    """Number of points in each neighborhood that belong to no other neighborhood.

    The owner always counts.  Another member ``X_j`` counts when the only
    neighborhoods containing it are its own and the one being scored.
    """
    members = neighborhoods.members
    n = members.shape[0]
    # every point sits in its own neighborhood, so a unique member has count 2
    counts = np.bincount(members.ravel(), minlength=n)
    return 1 + (counts[members[:, 1:]] == 2).sum(axis=1)
