"""Background-only fits, minimum resolvable pressure and signal likelihood ratios."""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Union

import numpy as np
from scipy.optimize import brentq

from src.config import ANALYSIS_RULES, INFERENCE_DEFAULTS
from src.errors import DomainError, FitConvergenceError, LikelihoodDomainError
from src.inference.fitting import minimize_scaled
from src.inference.likelihood import (
    DatasetParams,
    LikelihoodSettings,
    dataset_log_likelihood,
    nb_log_pmf,
    sigma_q_log_constraint,
)
from src.kinetics.species import GasSpecies, GaussianBackground, get_gas
from src.kinetics.spectrum import background_counts, validate_edges
from src.recon.binning import BinnedSpectrum

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackgroundFit:
    """Gaussian-only fit of a spectrum and the smallest signal pressure it excludes."""

    bg_amplitude: float
    bg_mean: float
    sigma_q: float
    log_likelihood: float
    pressure_floor: Optional[float]
    alpha: float
    surface_temperature: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class LikelihoodRatio:
    """2 * (max log L with signal - max log L without), with the best-fit signal pressure."""

    statistic: float
    pressure: float
    critical_value: float

    @property
    def rejected(self) -> bool:
        return self.statistic > self.critical_value

    def to_dict(self) -> Dict[str, float]:
        data = asdict(self)
        data["rejected"] = self.rejected
        return data


class _ProfileModel:
    """Log-likelihood of one spectrum with the nuisances (bg_amplitude, bg_mean, sigma_q)."""

    def __init__(self, spectrum, settings, alpha, surface_temperature, sigma_q_centre):
        self.spectrum = spectrum
        self.settings = settings
        self.alpha = alpha
        self.surface_temperature = surface_temperature
        self.sigma_q_centre = sigma_q_centre
        threshold = settings.threshold
        self.lower = np.array([0.0, -threshold, 0.0])
        self.upper = np.array([
            1.0 / ANALYSIS_RULES["search_window"], threshold, INFERENCE_DEFAULTS["sigma_q_max"]
        ])

    def constraint(self, sigma_q):
        if self.sigma_q_centre is None:
            return 0.0
        return sigma_q_log_constraint(sigma_q, self.sigma_q_centre, self.settings.sigma_q_constraint)

    def background_only(self, nuisance) -> float:
        amplitude, mean, sigma_q = nuisance
        if sigma_q <= 0 or amplitude <= 0:
            return -np.inf
        mu = background_counts(GaussianBackground(amplitude, mean, sigma_q), self.spectrum.bin_edges, self.spectrum.live_time)
        try:
            value = np.sum(nb_log_pmf(self.spectrum.counts, mu, self.settings.overdispersion))
        except LikelihoodDomainError:
            return -np.inf
        return float(value) + self.constraint(sigma_q)

    def with_signal(self, pressure, nuisance) -> float:
        amplitude, mean, sigma_q = nuisance
        if sigma_q <= 0 or pressure <= 0:
            return -np.inf
        dataset = DatasetParams(pressure, sigma_q, amplitude, mean)
        try:
            value = dataset_log_likelihood(
                self.spectrum, self.alpha, self.surface_temperature, dataset, self.settings
            )
        except (LikelihoodDomainError, DomainError):
            return -np.inf
        return value + self.constraint(sigma_q)

    def initial_nuisance(self) -> np.ndarray:
        sigma_q = self.sigma_q_centre or 60.0
        unit = background_counts(GaussianBackground(1.0, 0.0, sigma_q), self.spectrum.bin_edges, self.spectrum.live_time)
        amplitude = max(self.spectrum.total, 1) / max(unit.sum(), 1e-300)
        return np.array([min(amplitude, 0.5 * self.upper[0]), 0.0, sigma_q])

    def maximize(self, log_likelihood, x0, lower, upper):
        x, fun, success, message, _ = minimize_scaled(lambda v: -log_likelihood(v), x0, lower, upper)
        if not success:
            raise FitConvergenceError(f"Profile fit of {self.spectrum.dataset_id} failed: {message}", state=x)
        return x, -fun


def _prepare(spectrum, gas, settings, sigma_q_centre, alpha, surface_temperature):
    if settings is None:
        if gas is None:
            raise DomainError("A gas or likelihood settings are required")
        settings = LikelihoodSettings(gas=get_gas(gas) if isinstance(gas, str) else gas)
    validate_edges(spectrum.bin_edges, settings.threshold)
    if sigma_q_centre is None:
        sigma_q_centre = spectrum.metadata.get("sigma_q_calibration")
    return _ProfileModel(spectrum, settings, alpha, surface_temperature, sigma_q_centre)


def _fit_background(model: _ProfileModel):
    return model.maximize(model.background_only, model.initial_nuisance(), model.lower, model.upper)


def _profile(model: _ProfileModel, pressure: float, start: np.ndarray) -> float:
    _, value = model.maximize(lambda v: model.with_signal(pressure, v), start, model.lower, model.upper)
    return value


def background_only_fit(
    spectrum: BinnedSpectrum,
    gas: Union[str, GasSpecies, None] = None,
    settings: Optional[LikelihoodSettings] = None,
    sigma_q_centre: Optional[float] = None,
    alpha: float = INFERENCE_DEFAULTS["sensitivity_alpha"],
    surface_temperature: float = ANALYSIS_RULES["ts_lower_bound"],
    critical_value: float = ANALYSIS_RULES["profile_critical_value"],
    pressure_range=tuple(INFERENCE_DEFAULTS["sensitivity_pressure_range"]),
) -> BackgroundFit:
    """
    Fit the Gaussian background alone, then profile the signal pressure upwards.

    The pressure floor is the smallest pressure at which
    2 * (log L_background - max over nuisances of log L_signal+background) reaches
    ``critical_value``; None when no pressure in ``pressure_range`` is excluded.
    """
    model = _prepare(spectrum, gas, settings, sigma_q_centre, alpha, surface_temperature)
    nuisance, best = _fit_background(model)

    def excess(log_pressure):
        return 2.0 * (best - _profile(model, 10.0 ** log_pressure, nuisance)) - critical_value

    lo, hi = np.log10(pressure_range[0]), np.log10(pressure_range[1])
    floor = None
    if excess(lo) >= 0:
        floor = float(pressure_range[0])
    elif excess(hi) > 0:
        floor = float(10.0 ** brentq(excess, lo, hi, xtol=1e-3))
    else:
        logger.warning(f"No pressure below {pressure_range[1]:.1e} mbar is excluded by {spectrum.dataset_id}")

    result = BackgroundFit(
        float(nuisance[0]), float(nuisance[1]), float(nuisance[2]), float(best), floor, alpha, surface_temperature
    )
    if floor is not None:
        logger.info(f"Background-only fit of {spectrum.dataset_id}: pressure floor {floor:.2e} mbar")
    return result


def signal_likelihood_ratio(
    spectrum: BinnedSpectrum,
    gas: Union[str, GasSpecies, None] = None,
    settings: Optional[LikelihoodSettings] = None,
    sigma_q_centre: Optional[float] = None,
    alpha: float = INFERENCE_DEFAULTS["sensitivity_alpha"],
    surface_temperature: float = ANALYSIS_RULES["ts_lower_bound"],
    critical_value: float = ANALYSIS_RULES["profile_critical_value"],
) -> LikelihoodRatio:
    """Test statistic of signal + background against background alone, pressure free."""
    model = _prepare(spectrum, gas, settings, sigma_q_centre, alpha, surface_temperature)
    nuisance, background = _fit_background(model)

    # start the signal fit from the pressure that accounts for the counts above the background
    lower = np.concatenate([[0.0], model.lower])
    upper = np.concatenate([[INFERENCE_DEFAULTS["pressure_max"]], model.upper])
    best, start_value = None, -np.inf
    for pressure in np.logspace(-10, -6, 9):
        value = model.with_signal(pressure, nuisance)
        if value > start_value:
            best, start_value = pressure, value
    x, signal = model.maximize(
        lambda v: model.with_signal(v[0], v[1:]),
        np.concatenate([[best], nuisance]), lower, upper,
    )
    statistic = max(2.0 * (signal - background), 0.0)
    logger.info(f"Signal likelihood ratio for {spectrum.dataset_id}: {statistic:.2f} at P={x[0]:.2e} mbar")
    return LikelihoodRatio(float(statistic), float(x[0]), float(critical_value))
