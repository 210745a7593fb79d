"""Simulation laboratory for causal inference under network interference.

Modules:

    netcore     influence networks and the hybrid mixed-membership blockmodel
    hmmb_infer  posterior sampling, MCEM and Cramer-Rao bounds for HMMB parameters
    science     potential-outcome tables and causal estimands
    design      randomization schemes, exposure groups and rerandomization
    analysis    Neyman, difference-in-means and Bayesian imputation estimators
    factory     factorial harness, reports, ANOVA and the command line
"""

__version__ = "0.1.0"
