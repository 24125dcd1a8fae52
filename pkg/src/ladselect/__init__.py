"""Robust model selection from per-observation losses.

The n x K matrix of per-observation negative log-likelihoods is modelled as
Gaussian data with a Normal-Inverse-Wishart prior; posterior draws of the
expected-loss vector drive a smooth score for the best minimal-complexity
model within a tolerance.
"""

from .baselines import CPostConfig, EvannoResult, cpost_log_marginals, cpost_weights, evanno_delta_k, ic_scores, ic_weights
from .data import (
    LossMatrix,
    LossSummary,
    ModelMeta,
    bias_correct,
    load_loss_matrix,
    load_meta,
    summarize,
    write_loss_matrix,
)
from .errors import LadError, LadFormatError, LadNumericalError, LadSizeError, LadValidationError
from .harness import (
    BrierTable,
    ExperimentConfig,
    argmin_instability_experiment,
    brier_loss,
    run_comparison,
    tie_uniformity_experiment,
)
from .models import (
    DgpSpec,
    GmmFit,
    MvnSupportModel,
    gmm_fit_em,
    mvn_fit_and_loss,
    mvn_kl_oracle,
    noise_reference,
    simulate_dgp,
    sparse_normal_models,
)
from .niw import NigState, NiwState, PosteriorDraws, default_prior, nig_update, niw_update, sample_nig, sample_posterior
from .selector import (
    SelectorConfig,
    SlcReport,
    analyze,
    delta_optimal_set,
    hard_scores,
    minimal_complexity,
    plugin_probabilities,
    posterior_path,
    rescale_tolerance,
    select,
    slc_scores,
    soft_scores,
    target_set,
)

__version__ = "0.1.0"

__all__ = [
    "BrierTable",
    "CPostConfig",
    "DgpSpec",
    "EvannoResult",
    "ExperimentConfig",
    "GmmFit",
    "LadError",
    "LadFormatError",
    "LadNumericalError",
    "LadSizeError",
    "LadValidationError",
    "LossMatrix",
    "LossSummary",
    "ModelMeta",
    "MvnSupportModel",
    "NigState",
    "NiwState",
    "PosteriorDraws",
    "SelectorConfig",
    "SlcReport",
    "analyze",
    "argmin_instability_experiment",
    "bias_correct",
    "brier_loss",
    "cpost_log_marginals",
    "cpost_weights",
    "default_prior",
    "delta_optimal_set",
    "evanno_delta_k",
    "gmm_fit_em",
    "hard_scores",
    "ic_scores",
    "ic_weights",
    "load_loss_matrix",
    "load_meta",
    "minimal_complexity",
    "mvn_fit_and_loss",
    "mvn_kl_oracle",
    "nig_update",
    "niw_update",
    "noise_reference",
    "plugin_probabilities",
    "posterior_path",
    "rescale_tolerance",
    "run_comparison",
    "sample_nig",
    "sample_posterior",
    "select",
    "simulate_dgp",
    "slc_scores",
    "soft_scores",
    "summarize",
    "sparse_normal_models",
    "target_set",
    "tie_uniformity_experiment",
    "write_loss_matrix",
]
