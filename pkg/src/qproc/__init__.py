"""Bayesian simultaneous quantile regression.

Models the conditional CDF of a bounded response as a simplex-weighted
combination of monotone spline basis functions whose weights depend on the
covariates through a single-hidden-layer neural network.  The posterior over
network weights is explored with a gradient-based no-U-turn sampler, and the
posterior-mean CDF is inverted to non-crossing quantile curves.  Covariate
effects are summarized with accumulated-local-effect curves and variable
importance scores.
"""

from qproc.splines import BasisKind, BasisMatrix, KnotVector, build_knots, eval_ispline, eval_mspline
from qproc.network import NetworkShape, WeightState, forward_scores, init_state, softmax_rows
from qproc.posterior import (
    Dataset,
    LogPosterior,
    PosteriorConfig,
    grad_log_posterior,
    log_likelihood,
    log_posterior,
    log_prior,
)
from qproc.nuts import Chain, NutsConfig, leapfrog, nuts_step, run_chain, run_chains_parallel
from qproc.diagnostics import DiagnosticsReport, loglik_trace, scalar_diagnostics
from qproc.model import (
    FitResult,
    QuantileSurface,
    fit,
    invert_cdf,
    posterior_mean_cdf,
    predict_quantiles,
    waic,
)
from qproc.ale import (
    AleBins,
    AleEstimate,
    AleKind,
    ale_interaction,
    ale_main,
    ale_second_order,
    make_bins,
    posterior_ale,
    vi_score,
)
from qproc.simulate import DesignSpec, RmiseReport, eval_grid, generate, rmise

__all__ = [
    "AleBins",
    "AleEstimate",
    "AleKind",
    "BasisKind",
    "BasisMatrix",
    "Chain",
    "Dataset",
    "DesignSpec",
    "DiagnosticsReport",
    "FitResult",
    "KnotVector",
    "LogPosterior",
    "NetworkShape",
    "NutsConfig",
    "PosteriorConfig",
    "QuantileSurface",
    "RmiseReport",
    "WeightState",
    "ale_interaction",
    "ale_main",
    "ale_second_order",
    "build_knots",
    "eval_grid",
    "eval_ispline",
    "eval_mspline",
    "fit",
    "forward_scores",
    "generate",
    "grad_log_posterior",
    "init_state",
    "invert_cdf",
    "leapfrog",
    "log_likelihood",
    "log_posterior",
    "log_prior",
    "loglik_trace",
    "make_bins",
    "nuts_step",
    "posterior_ale",
    "posterior_mean_cdf",
    "predict_quantiles",
    "rmise",
    "run_chain",
    "run_chains_parallel",
    "scalar_diagnostics",
    "softmax_rows",
    "vi_score",
    "waic",
]
