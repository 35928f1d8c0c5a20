"""Módulo de verossimilhança, ajustes e amostragem de espectros binados."""

from src.inference.likelihood import (
    DatasetParams,
    JointModel,
    LikelihoodSettings,
    ModelParams,
    dataset_log_likelihood,
    expected_bin_counts,
    joint_log_posterior,
    nb_log_pmf,
    nb_sample,
    parameter_bounds,
    simulate_spectrum,
)
from src.inference.fitting import fit_map
from src.inference.sampling import Posterior, effective_sample_size, run_mcmc, sample_posterior, split_rhat
from src.inference.summary import (
    GaugeComparison,
    PosteriorSummary,
    PressureEstimate,
    compare_to_gauge,
    estimate_pressures,
    summarize,
    write_summary,
)
from src.inference.sensitivity import BackgroundFit, LikelihoodRatio, background_only_fit, signal_likelihood_ratio

__all__ = [
    "BackgroundFit",
    "DatasetParams",
    "GaugeComparison",
    "JointModel",
    "LikelihoodRatio",
    "LikelihoodSettings",
    "ModelParams",
    "Posterior",
    "PosteriorSummary",
    "PressureEstimate",
    "background_only_fit",
    "compare_to_gauge",
    "dataset_log_likelihood",
    "effective_sample_size",
    "estimate_pressures",
    "expected_bin_counts",
    "fit_map",
    "joint_log_posterior",
    "nb_log_pmf",
    "nb_sample",
    "parameter_bounds",
    "run_mcmc",
    "sample_posterior",
    "signal_likelihood_ratio",
    "simulate_spectrum",
    "split_rhat",
    "summarize",
    "write_summary",
]
