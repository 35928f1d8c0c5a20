"""Configurações centrais do projeto gascoll."""

import os
from pathlib import Path

# Diretórios base
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
SCHEMAS_DIR = BASE_DIR / "schemas"
CONFIG_DIR = BASE_DIR / "config"
LOGS_DIR = Path(os.getenv("GASCOLL_LOGS_DIR", BASE_DIR / "logs"))
OUTPUT_DIR = Path(os.getenv("GASCOLL_OUTPUT_DIR", BASE_DIR / "output"))
KERNEL_CACHE_DIR = Path(os.getenv("GASCOLL_KERNEL_CACHE", BASE_DIR / "cache" / "kernels"))

# Criar diretórios se não existirem
for directory in [LOGS_DIR, OUTPUT_DIR, KERNEL_CACHE_DIR]:
    directory.mkdir(parents=True, exist_ok=True)

GASES_FILE = DATA_DIR / "gases.json"
EXPERIMENT_CONFIG_FILE = CONFIG_DIR / "experiment.yml"

# Cálculo da teoria cinética
KINETICS_DEFAULTS = {
    "gas_temperature": 293.0,  # K
    "sphere_radius": 50e-9,  # m
    "grid_step": 1.0,  # keV/c, internal grid
    "grid_max": 1500.0,  # keV/c, spectral tail cutoff
    "max_requested_step": 5.0,  # keV/c, coarser grids alias the smearing kernel
    "kernel_samples": 1_000_000,
    "kernel_min_samples": 100_000,
    "kernel_smoothing": 2.0,  # keV/c, Gaussian smoothing of the MC histogram
    "kernel_seed": 20240601,
    "ts_node_step": 10.0,  # K, spacing of the surface-temperature ladder
    "ts_max": 1500.0,  # K
    "smearing_truncation": 8.0,  # kernel half-width in units of sigma_q
}

# Oscilador, ruído e calibração do simulador
SIMULATION_DEFAULTS = {
    "mass": 1.0e-18,  # kg
    "resonance_frequency": 48e3,  # Hz
    "damping_rate": 1e3,  # Hz, gamma / 2pi
    "sample_rate": 5e6,  # samples/s
    "readout_noise_density": 1.2e-13,  # m/sqrt(Hz)
    "backaction_force_density": 1.8e-20,  # N/sqrt(Hz)
    "background_gas": "H2O",
    "background_pressure": 3e-8,  # mbar
    "monitor_fractional_rms": 0.02,
    "monitor_correlation_time": 5e-3,  # s
    "calibration_period": 0.3,  # s
    "calibration_amplitude": 1040.0,  # keV/c
    "calibration_spacing": 5e-3,  # s, pulse spacing in dedicated calibration runs
    "calibration_pulses": 200,
    "calibration_seed": 1040,
    "linearity_amplitudes": [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0],
    "noise_tolerance": 0.05,
    "noise_acceptance": 0.10,
    "noise_max_iterations": 4,
}

# Reconstrução e análise estatística
ANALYSIS_RULES = {
    "analysis_window": 0.1,  # s
    "window_padding": 5e-3,  # s, discarded on both sides after filtering
    "search_window": 50e-6,  # s
    "psd_segment": 2048,  # samples
    "psd_outlier_mads": 5.0,
    "psd_min_segments": 8,
    "noise_cut_region": 250e-6,  # s, full width around the candidate
    "impulse_exclusion_periods": 2.0,
    "cut_sigma": 1.0,
    "gof_half_span_periods": 10.0,
    "gof_alignment_samples": 3,
    "gof_percentile": 98.0,
    "template_min_segments": 50,
    "veto_windows": 1,
    "veto_min_amplitude": 900.0,  # keV/c
    "threshold": 150.0,  # keV/c
    "bin_edges": {"start": 150.0, "stop": 1000.0, "step": 25.0},
    "overdispersion": 0.05,
    "sigma_q_constraint": 0.10,  # fractional width
    "ts_lower_bound": 293.0,  # K
    "pileup_pressure_limit": 1e-7,  # mbar
    "pileup_min_expected": 5.0,  # counts in a bin before it is compared
    "pileup_deviation_sigma": 3.0,
    "rhat_max": 1.05,
    "ess_min": 500,
    "profile_critical_value": 2.71,  # one-sided 95% for one parameter
}

# Verossimilhança, ajuste e amostragem da posterior
INFERENCE_DEFAULTS = {
    "total_constraint": "extended",  # or "multinomial"
    "fit_bg_mean": True,
    "kernel_method": "mc",
    "pressure_max": 1e-5,  # mbar
    "sigma_q_max": 500.0,  # keV/c
    "map_max_iterations": 5000,
    "mcmc_steps": 4000,
    "mcmc_chains": 32,
    "mcmc_burn_fraction": 0.25,
    "mcmc_seed": 2718,
    "walker_jitter": 0.01,  # fractional spread of walkers around the MAP point
    "sensitivity_alpha": 0.6,
    "sensitivity_pressure_range": [1e-12, 1e-6],  # mbar, profile search bracket
}

SCHEMA_VERSION = "1.0"
