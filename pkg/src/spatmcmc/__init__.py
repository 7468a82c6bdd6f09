"""Automated MCMC for spatial Poisson count models: heavy-tailed posterior
approximation, exact rejection and independence Metropolis-Hastings samplers,
and consistent-batch-means fixed-width stopping."""

from .model import (
    Hyperparameters,
    ModelState,
    PrecisionGraphMatrix,
    SpatialDataset,
    build_precision_matrix,
    log_unnormalized_posterior,
    make_log_target,
)
from .gaussian_approx import ApproximationContext, GaussianApproximation, compute_mu_hat
from .proposal import FitConfig, LogTParams, ProposalSpec, SpatialProposal, fit_proposal
from .samplers import (
    BoundConfig,
    EnvelopeBound,
    SamplerRun,
    empirical_sup_bound,
    independence_mh,
    optimize_bound,
    rejection_sample,
)
from .mc_output import ChainSummary, StoppingRule, cbm_variance, evaluate_stopping, summarize
from .cli import RunConfig, load_dataset, run, synthesize_dataset

__version__ = "0.1.0"
