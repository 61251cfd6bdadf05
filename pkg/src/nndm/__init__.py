"""Nearest neighbor-Dirichlet mixture density estimation."""

__version__ = "0.1.0"

from .classifier import ClassifierModel, brier_score, fit_classifier, predict_proba, roc_auc
from .cv import CvResult, cv_delta0
from .estimator import FitOptions, FittedModel, density_on_grid, fit, load_model, save_model
from .exceptions import (
    CVFailureError,
    DegenerateDataError,
    InvalidDataError,
    InvalidParameterError,
    ModelFormatError,
    ModelVersionError,
    NNDMError,
    NumericalError,
    UnsupportedError,
)
from .hyper import Hyperparameters, bandwidth_h2, choose_alpha, default_hyperparameters
from .neighbors import build_loo_stats, build_neighborhoods, count_unique_members
from .posterior import (
    credible_band,
    evaluate_draw,
    functional_variance,
    mvt_logpdf,
    posterior_mean_density,
    sample_draws,
    update_neighborhood,
    variance_bound,
)
