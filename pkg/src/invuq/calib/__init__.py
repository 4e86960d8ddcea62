"""Modular Bayesian calibration: priors, likelihood assembly and sampling."""
from .likelihood import (
    DEFAULT_PIPELINE,
    DataSplit,
    LikelihoodContext,
    ResponseTerm,
    assemble_covariance,
    build_discrepancy,
    log_posterior,
    make_context,
    prepare_context,
    split_data,
    train_emulators,
)
from .mcmc import (
    DEFAULT_MCMC,
    PosteriorSamples,
    PosteriorSummary,
    effective_sample_size,
    posterior_to_prior,
    run_mcmc,
    split_rhat,
    summarize_posterior,
)
from .priors import IndependentPrior, TruncatedGaussianPrior, prior_from_dict

__all__ = [
    "DEFAULT_MCMC", "DEFAULT_PIPELINE", "DataSplit", "IndependentPrior", "LikelihoodContext", "PosteriorSamples",
    "PosteriorSummary", "ResponseTerm", "TruncatedGaussianPrior", "assemble_covariance", "build_discrepancy",
    "effective_sample_size", "log_posterior", "make_context", "posterior_to_prior", "prepare_context",
    "prior_from_dict", "run_mcmc", "split_rhat", "summarize_posterior", "train_emulators",
]
