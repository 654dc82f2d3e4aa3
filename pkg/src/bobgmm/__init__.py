"""Approximate posterior sampling for Gaussian mixture models.

Bootstrap posterior draws are obtained by maximizing randomly weighted
posteriors with a tempered EM algorithm; the weight distribution can be
tuned automatically by Bayesian optimization of a noisy reverse-KL
estimate. A conjugate exact-posterior oracle, posterior-predictive
samplers, and TV/KS metrics support end-to-end verification.
"""

from ._backend import BACKEND
from .errors import (
    BobgmmError,
    DegeneratePosteriorError,
    DimensionError,
    EmFailure,
    InvalidDofError,
    NonFiniteDensityError,
    NotPositiveDefiniteError,
    ObjectiveEvaluationError,
)
from .gmm_core import (
    FlatIndex,
    GmmParams,
    NiwDirichletPrior,
    flat_dim,
    flatten,
    log_likelihood,
    log_prior,
    log_unnorm_posterior,
    unflatten,
)
from .weighted_em import (
    EmResult,
    EmSettings,
    TemperingProfile,
    WeightDraw,
    default_tempering_grid,
    e_step,
    m_step,
    run_weighted_em,
    temperature,
    tune_tempering,
)
from .random_weighting import SeededRng, WeightScheme, draw_weights
from .bob_objective import BobConfig, Kde1d, estimate_objective, kde_fit
from .bayes_opt import BoBudget, BoResult, GpState, expected_improvement, matern25, maximize
from .conjugate_oracle import (
    PosteriorHyper,
    posterior_hyper,
    sample_bayes_posterior,
    sample_inverse_wishart,
)
from .predictive_metrics import PredictiveDraws, ks_hat, sample_predictive, tv_hat
from .harness import (
    RunConfig,
    SimSetting,
    TABLE_SETTINGS,
    compare_methods,
    cv_select_lambda_nu,
    default_box,
    default_prior,
    generate_simulation,
    init_params,
    run_bob,
    run_wbb,
    standardize,
)

__version__ = "0.1.0"
