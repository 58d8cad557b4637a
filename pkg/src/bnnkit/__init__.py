"""Bayesian inference toolkit: MCMC samplers, ADVI, conjugate oracles and
Bayesian neural networks over differentiable log densities."""

__version__ = "0.1.0"

from .advi import AdviConfig, Family, VariationalState, elbo_estimate, elbo_gradients, run_advi
from .bnn import BnnArchitecture, bnn_log_joint, posterior_predictive, synthesize_powerball
from .conjugate import as_log_density_model, oracle_for
from .diagnostics import chain_stats, confusion, effective_sample_size, hpd, posterior_predictive_check
from .gradients import check_gradient, grad_log_density
from .mcmc import HmcConfig, MhConfig, NutsConfig, SampleSet, hmc, metropolis_hastings, nuts, sample_chains
from .model_core import Dataset, LogDensityModel, Transform, gaussian_model, transformed_log_density

__all__ = [
    "AdviConfig", "Family", "VariationalState", "elbo_estimate", "elbo_gradients", "run_advi",
    "BnnArchitecture", "bnn_log_joint", "posterior_predictive", "synthesize_powerball",
    "as_log_density_model", "oracle_for",
    "chain_stats", "confusion", "effective_sample_size", "hpd", "posterior_predictive_check",
    "check_gradient", "grad_log_density",
    "HmcConfig", "MhConfig", "NutsConfig", "SampleSet", "hmc", "metropolis_hastings", "nuts", "sample_chains",
    "Dataset", "LogDensityModel", "Transform", "gaussian_model", "transformed_log_density",
]
