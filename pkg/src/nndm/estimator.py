"""End-to-end fitting, evaluation on grids and model persistence."""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cv import DEFAULT_GRID, cv_delta0
from .exceptions import (
    InvalidParameterError,
    ModelFormatError,
    ModelVersionError,
    NNDMError,
)
from .hyper import Hyperparameters, choose_alpha, default_hyperparameters
from .neighbors import as_dataset, build_neighborhoods
from .posterior import (
    NeighborhoodPosterior,
    as_points,
    conjugate_update,
    log_mean_density,
    posterior_mean_density,
    quantile_band,
    sample_draws,
)

MODEL_FORMAT = "nndm-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class FitOptions:
    """How to fit.  ``None`` means "use the default".

    ``delta0sq`` is a number or ``"cv"``; ``alpha`` is a number or ``"auto"``
    (the data-driven rule).
    """

    k: int = None
    delta0sq: object = None
    cv_grid: tuple = None
    alpha: object = None
    mu0: tuple = None
    nu0: float = None
    gamma0: float = None
    seed: int = 0


@dataclass(frozen=True, eq=False)
class FittedModel:
    """The ``n`` neighborhood posteriors sharing one prior.

    Immutable; derived Cholesky factors are computed once at construction.
    """

    hyper: Hyperparameters
    mu: np.ndarray
    psi: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float, ndmin=2)
        psi = np.array(self.psi, dtype=float)
        if psi.ndim != 3 or psi.shape != (mu.shape[0], mu.shape[1], mu.shape[1]):
            raise InvalidParameterError(f"psi has shape {psi.shape}, expected (n, p, p)")
        if mu.shape[1] != self.hyper.p:
            raise InvalidParameterError("posterior dimension does not match the prior")
        chol = np.linalg.cholesky(psi)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        for a in (mu, psi, chol, logdet):
            a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "psi_chol", chol)
        object.__setattr__(self, "psi_logdet", logdet)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def n(self):
        return self.mu.shape[0]

    @property
    def p(self):
        return self.mu.shape[1]

    @property
    def nu_n(self):
        return self.hyper.nu_n

    @property
    def gamma_n(self):
        return self.hyper.gamma_n

    @property
    def posteriors(self):
        return [self.posterior(i) for i in range(self.n)]

    def posterior(self, i):
        return NeighborhoodPosterior(self.mu[i], self.nu_n, self.gamma_n, self.psi[i])

    def mean_density(self, x):
        return posterior_mean_density(self, x)

    def logpdf(self, x):
        return log_mean_density(self, x)

    def sample(self, M, seed=None):
        seed = self.provenance.get("seed", 0) if seed is None else seed
        return sample_draws(self, M, seed)


def fit(data, options=None, **kwargs):
    """Fit an NN-DM density estimate.

    Neighborhoods, optional cross-validation of ``delta0sq``, the conjugate
    updates and optional data-driven ``alpha``, in that order.  Keyword
    arguments override fields of ``options``.
    """
    options = options or FitOptions()
    if kwargs:
        options = FitOptions(**{**options.__dict__, **kwargs})
    X = as_dataset(data)
    n, p = X.shape
    base = default_hyperparameters(n, p)
    k = base.k if options.k is None else int(options.k)
    if n < max(3, k):
        raise InvalidParameterError(f"need n >= max(3, k); got n={n}, k={k}")
    hyper = Hyperparameters(
        mu0=base.mu0 if options.mu0 is None else np.asarray(options.mu0, dtype=float),
        nu0=base.nu0 if options.nu0 is None else options.nu0,
        gamma0=base.gamma0 if options.gamma0 is None else options.gamma0,
        delta0sq=base.delta0sq,
        k=k,
    )
    provenance = {"seed": int(options.seed), "delta0sq_source": "default", "alpha_source": "default"}

    stage = "cv"
    try:
        if isinstance(options.delta0sq, str):
            if options.delta0sq != "cv":
                raise InvalidParameterError(f"delta0sq must be a number or 'cv', got {options.delta0sq!r}")
            grid = DEFAULT_GRID if options.cv_grid is None else options.cv_grid
            cv = cv_delta0(X, k, hyper, grid)
            hyper = hyper.with_delta0sq(cv.best)
            provenance["delta0sq_source"] = "cv"
            provenance["cv_grid"] = cv.grid.tolist()
            provenance["cv_scores"] = [None if not np.isfinite(s) else float(s) for s in cv.scores]
        elif options.delta0sq is not None:
            hyper = hyper.with_delta0sq(float(options.delta0sq))
            provenance["delta0sq_source"] = "user"

        stage = "neighborhoods"
        nb = build_neighborhoods(X, k)
        stage = "update"
        mu, psi = conjugate_update(nb.means, nb.scatters, hyper)

        stage = "alpha"
        if isinstance(options.alpha, str):
            if options.alpha != "auto":
                raise InvalidParameterError(f"alpha must be a number or 'auto', got {options.alpha!r}")
            hyper = hyper.with_alpha(choose_alpha(X, hyper))
            provenance["alpha_source"] = "rule"
        elif options.alpha is not None:
            hyper = hyper.with_alpha(float(options.alpha))
            provenance["alpha_source"] = "user"
    except NNDMError as exc:
        exc.stage = stage
        raise
    return FittedModel(hyper, mu, psi, provenance)


@dataclass(frozen=True)
class DensityTable:
    """Grid evaluation: closed-form mean plus optional Monte Carlo band."""

    x: np.ndarray  # (m, p)
    mean: np.ndarray
    lo: np.ndarray = None
    hi: np.ndarray = None
    mc_mean: np.ndarray = None
    level: float = None


def density_on_grid(model, grid, M=0, level=0.95, seed=None):
    """Mean density on ``grid`` and, when ``M > 0``, a pointwise credible band."""
    X, _ = as_points(grid, model.p)
    mean = posterior_mean_density(model, X)
    if not M:
        return DensityTable(x=X, mean=mean)
    band = quantile_band(model.sample(M, seed).evaluate(X), level)
    return DensityTable(x=X, mean=mean, lo=band.lo, hi=band.hi, mc_mean=band.mean, level=level)


def auto_grid(data, steps=200, width=3.0):
    """Univariate grid over the data range widened by ``width`` sample SDs each side."""
    X = as_dataset(data)
    if X.shape[1] != 1:
        raise InvalidParameterError("automatic grids are only defined for p = 1")
    sd = float(np.std(X[:, 0], ddof=1)) if X.shape[0] > 1 else 1.0
    return np.linspace(X.min() - width * sd, X.max() + width * sd, int(steps))


# --- persistence -----------------------------------------------------------


def _matrix(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel(order="C")]}


def _unmatrix(obj):
    shape = tuple(int(s) for s in obj["shape"])
    data = np.array([float(v) for v in obj["data"]], dtype=float)
    if data.size != math.prod(shape):
        raise ModelFormatError(f"matrix data has {data.size} entries, shape {shape} needs {math.prod(shape)}")
    return data.reshape(shape)


def model_to_dict(model):
    h = model.hyper
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "library_version": __version__,
        "n": model.n,
        "p": model.p,
        "hyper": {
            "mu0": _matrix(h.mu0),
            "nu0": h.nu0,
            "gamma0": h.gamma0,
            "delta0sq": h.delta0sq,
            "psi0": _matrix(h.psi0),
            "alpha": h.alpha,
            "k": h.k,
        },
        "provenance": model.provenance,
        "mu": _matrix(model.mu),
        "psi": _matrix(model.psi),
    }


def dumps_model(model):
    """Canonical text serialization.  Floats use the shortest round-tripping repr."""
    return json.dumps(model_to_dict(model), sort_keys=True, indent=1, allow_nan=False) + "\n"


def model_digest(model):
    return hashlib.sha256(dumps_model(model).encode("utf-8")).hexdigest()


def loads_model(text):
    if isinstance(text, bytes):
        raw = text
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError("model file is not UTF-8", exc.start) from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ModelFormatError(f"malformed model file: {exc.msg}", offset) from exc
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not an nndm model file")
    version = obj.get("version")
    if not isinstance(version, int):
        raise ModelFormatError("model file has no integer version")
    if version > MODEL_VERSION:
        raise ModelVersionError(
            f"model format version {version} is newer than supported version {MODEL_VERSION}"
        )
    try:
        h = obj["hyper"]
        hyper = Hyperparameters(
            mu0=_unmatrix(h["mu0"]),
            nu0=h["nu0"],
            gamma0=h["gamma0"],
            delta0sq=h["delta0sq"],
            psi0=_unmatrix(h["psi0"]),
            alpha=h["alpha"],
            k=h["k"],
        )
        model = FittedModel(hyper, _unmatrix(obj["mu"]), _unmatrix(obj["psi"]), obj.get("provenance", {}))
    except (KeyError, TypeError, ValueError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"invalid model contents: {exc}") from exc
    if (model.n, model.p) != (obj.get("n"), obj.get("p")):
        raise ModelFormatError("declared dimensions do not match the stored matrices")
    return model


def save_model(model, sink):
    """Write ``model`` to a path or a text file object."""
    text = dumps_model(model)
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def load_model(source):
    """Read a model from a path or a file object."""
    if hasattr(source, "read"):
        return loads_model(source.read())
    with open(source, "rb") as fh:
        return loads_model(fh.read())
