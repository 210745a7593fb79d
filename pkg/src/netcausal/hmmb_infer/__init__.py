"""Bayesian estimation of HMMB parameters from an observed influence network."""

from .fisher import FisherMatrix, bound_widths, cramer_rao_width, fisher_information
from .gradients import block_gradient, lambda_gradient
from .init import init_chain, profile_block_diagonal, spectral_memberships
from .mcem import McemResult, run_mcem
from .posterior import (
    HmmbPosterior,
    align_communities,
    evaluate_against_truth,
    evaluate_run,
    read_trace,
    rescale_to_reference,
    write_summary,
    write_trace,
)
from .sampler import (
    ChainState,
    McmcConfig,
    StepRecord,
    gibbs_step_hyper,
    gibbs_step_switches,
    log_joint_posterior,
    mh_step_block,
    mh_step_lambda,
    mh_step_membership,
    run_chain,
    run_mcmc,
    select_chain,
    switch_on_probability,
)

__all__ = [
    "ChainState", "FisherMatrix", "HmmbPosterior", "McemResult", "McmcConfig", "StepRecord",
    "align_communities", "block_gradient", "bound_widths", "cramer_rao_width",
    "evaluate_against_truth", "evaluate_run", "fisher_information", "gibbs_step_hyper", "gibbs_step_switches",
    "init_chain", "lambda_gradient", "log_joint_posterior", "mh_step_block", "mh_step_lambda",
    "mh_step_membership", "profile_block_diagonal", "read_trace", "rescale_to_reference",
    "run_chain", "run_mcem", "run_mcmc", "select_chain", "spectral_memberships",
    "switch_on_probability", "write_summary", "write_trace",
]
