"""Binned negative-binomial likelihood of signal + Gaussian-background spectra."""

import logging
from dataclasses import astuple, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import betaln, xlogy
from scipy.stats import multinomial, norm, poisson

from src.config import ANALYSIS_RULES, INFERENCE_DEFAULTS, KINETICS_DEFAULTS
from src.errors import ConfigurationError, DomainError, LikelihoodDomainError
from src.kinetics.diffuse import KERNEL_METHODS, DiffuseKernelCache
from src.kinetics.species import GasSpecies, GaussianBackground, SpectrumParams, get_gas
from src.kinetics.spectrum import expected_counts, validate_edges
from src.recon.binning import BinnedSpectrum, default_bin_edges

logger = logging.getLogger(__name__)

TOTAL_CONSTRAINTS = ("extended", "multinomial")
SHARED_NAMES = ("alpha", "surface_temperature")
DATASET_NAMES = ("pressure", "sigma_q", "bg_amplitude", "bg_mean")


def nb_log_pmf(k, mu, delta: float = ANALYSIS_RULES["overdispersion"]):
    """
    Log-pmf of a negative binomial with mean mu and variance mu * (1 + delta).

    delta = 0 is the Poisson limit.

    Raises:
        LikelihoodDomainError: If any mu is not positive.
    """
    k = np.asarray(k)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0) or np.any(~np.isfinite(mu)):
        raise LikelihoodDomainError("Negative-binomial expectation must be positive and finite")
    if delta < 0:
        raise DomainError(f"Overdispersion must be >= 0, got {delta}")
    if delta == 0:
        return poisson.logpmf(k, mu)
    # size n = mu/delta; the beta form stays accurate as n grows
    n = mu / delta
    return -betaln(n, k + 1.0) - np.log(n + k) - n * np.log1p(delta) + xlogy(k, delta / (1.0 + delta))


def nb_sample(mu, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Counts with mean mu and variance mu * (1 + delta), as a gamma-mixed Poisson."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise DomainError("Expected counts must be non-negative")
    if delta == 0:
        return rng.poisson(mu)
    rate = np.zeros_like(mu)
    positive = mu > 0
    rate[positive] = rng.gamma(mu[positive] / delta, delta)
    return rng.poisson(rate)


@dataclass(frozen=True)
class DatasetParams:
    """Per-dataset parameters: pressure (mbar), sigma_q and bg_mean (keV/c), bg_amplitude (s^-1)."""

    pressure: float
    sigma_q: float
    bg_amplitude: float
    bg_mean: float = 0.0

    @property
    def background(self) -> GaussianBackground:
        return GaussianBackground(self.bg_amplitude, self.bg_mean, self.sigma_q)


@dataclass(frozen=True)
class ModelParams:
    """Shared accommodation and surface temperature plus one DatasetParams per spectrum."""

    alpha: float
    surface_temperature: float
    datasets: Tuple[DatasetParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))

    def to_vector(self) -> np.ndarray:
        values = [self.alpha, self.surface_temperature]
        for dataset in self.datasets:
            values.extend(astuple(dataset))
        return np.array(values, dtype=float)

    @classmethod
    def from_vector(cls, vector: Sequence[float], n_datasets: int) -> "ModelParams":
        vector = np.asarray(vector, dtype=float)
        width = len(DATASET_NAMES)
        if vector.size != 2 + width * n_datasets:
            raise DomainError(f"Parameter vector of length {vector.size} does not fit {n_datasets} datasets")
        datasets = [
            DatasetParams(*map(float, vector[2 + width * i:2 + width * (i + 1)])) for i in range(n_datasets)
        ]
        return cls(float(vector[0]), float(vector[1]), tuple(datasets))

    def with_dataset(self, index: int, **changes) -> "ModelParams":
        datasets = list(self.datasets)
        datasets[index] = replace(datasets[index], **changes)
        return replace(self, datasets=tuple(datasets))

    @staticmethod
    def names(n_datasets: int) -> List[str]:
        names = list(SHARED_NAMES)
        for i in range(n_datasets):
            names.extend(f"{name}_{i}" for name in DATASET_NAMES)
        return names


@dataclass(frozen=True)
class LikelihoodSettings:
    """Quantities held fixed in a fit."""

    gas: GasSpecies
    gas_temperature: float = KINETICS_DEFAULTS["gas_temperature"]
    radius: float = KINETICS_DEFAULTS["sphere_radius"]
    overdispersion: float = ANALYSIS_RULES["overdispersion"]
    threshold: float = ANALYSIS_RULES["threshold"]
    sigma_q_constraint: float = ANALYSIS_RULES["sigma_q_constraint"]
    total_constraint: str = INFERENCE_DEFAULTS["total_constraint"]
    fit_bg_mean: bool = INFERENCE_DEFAULTS["fit_bg_mean"]
    kernel_method: str = INFERENCE_DEFAULTS["kernel_method"]
    cache: Optional[DiffuseKernelCache] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.total_constraint not in TOTAL_CONSTRAINTS:
            raise ConfigurationError(
                f"total_constraint must be one of {TOTAL_CONSTRAINTS}, got {self.total_constraint!r}"
            )
        if self.kernel_method not in KERNEL_METHODS:
            raise ConfigurationError(f"Unknown kernel method {self.kernel_method!r}")

    @classmethod
    def for_spectra(cls, spectra: Sequence[BinnedSpectrum], **overrides) -> "LikelihoodSettings":
        """Settings with the gas taken from the spectra metadata."""
        gases = {str(s.metadata.get("gas", "")) for s in spectra}
        if len(gases) != 1 or "" in gases:
            raise ConfigurationError(f"Joint fits need spectra of one named gas, got {sorted(gases)}")
        return cls(gas=get_gas(gases.pop()), **overrides)


def parameter_bounds(n_datasets: int, settings: LikelihoodSettings) -> Tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds of the full parameter vector."""
    lower = [0.0, ANALYSIS_RULES["ts_lower_bound"]]
    upper = [1.0, KINETICS_DEFAULTS["ts_max"]]
    for _ in range(n_datasets):
        lower.extend([0.0, 0.0, 0.0, -settings.threshold])
        upper.extend([
            INFERENCE_DEFAULTS["pressure_max"],
            INFERENCE_DEFAULTS["sigma_q_max"],
            1.0 / ANALYSIS_RULES["search_window"],
            settings.threshold,
        ])
    return np.array(lower), np.array(upper)


def expected_bin_counts(
    spectrum: BinnedSpectrum,
    alpha: float,
    surface_temperature: float,
    dataset: DatasetParams,
    settings: LikelihoodSettings,
) -> np.ndarray:
    """Signal plus Gaussian-background expectation in every bin of ``spectrum``."""
    params = SpectrumParams(
        gas=settings.gas,
        pressure=dataset.pressure,
        alpha=alpha,
        surface_temperature=surface_temperature,
        sigma_q=dataset.sigma_q,
        gas_temperature=settings.gas_temperature,
        radius=settings.radius,
    )
    return expected_counts(
        params,
        spectrum.bin_edges,
        spectrum.live_time,
        background=dataset.background,
        kernel_method=settings.kernel_method,
        cache=settings.cache,
        threshold=settings.threshold,
    )


def dataset_log_likelihood(
    spectrum: BinnedSpectrum,
    alpha: float,
    surface_temperature: float,
    dataset: DatasetParams,
    settings: LikelihoodSettings,
) -> float:
    """
    Log-likelihood of one binned spectrum.

    With the extended total constraint every bin contributes an independent
    negative-binomial term; with the multinomial one the counts are conditioned on
    their observed total.

    Raises:
        LikelihoodDomainError: If any expected bin count is not positive.
        BinningError: If the spectrum has bins below the analysis threshold.
    """
    validate_edges(spectrum.bin_edges, settings.threshold)
    mu = expected_bin_counts(spectrum, alpha, surface_temperature, dataset, settings)
    if np.any(mu <= 0):
        raise LikelihoodDomainError(
            f"Expected counts not positive in {int(np.sum(mu <= 0))} bins of {spectrum.dataset_id}"
        )
    if settings.total_constraint == "multinomial":
        return float(multinomial.logpmf(spectrum.counts, n=spectrum.total, p=mu / mu.sum()))
    return float(np.sum(nb_log_pmf(spectrum.counts, mu, settings.overdispersion)))


def sigma_q_log_constraint(sigma_q: float, centre: float, fraction: float) -> float:
    """Gaussian constraint on a dataset's resolution around its calibration value."""
    return float(norm.logpdf(sigma_q, loc=centre, scale=fraction * centre))


class JointModel:
    """
    Joint posterior over datasets that share accommodation and surface temperature.

    The model is callable on the vector of free parameters; with ``fit_bg_mean`` off,
    each bg_mean stays at its value in ``reference``.
    """

    def __init__(
        self,
        spectra: Sequence[BinnedSpectrum],
        settings: Optional[LikelihoodSettings] = None,
        sigma_q_centres: Optional[Sequence[float]] = None,
        reference: Optional[ModelParams] = None,
    ):
        self.spectra = list(spectra)
        if not self.spectra:
            raise DomainError("A joint fit needs at least one dataset")
        self.settings = settings or LikelihoodSettings.for_spectra(self.spectra)
        if sigma_q_centres is None:
            try:
                sigma_q_centres = [float(s.metadata["sigma_q_calibration"]) for s in self.spectra]
            except KeyError as e:
                raise ConfigurationError("Spectra lack the calibration sigma_q constraint") from e
        self.sigma_q_centres = np.asarray(sigma_q_centres, dtype=float)
        if self.sigma_q_centres.size != len(self.spectra) or np.any(self.sigma_q_centres <= 0):
            raise ConfigurationError("One positive calibration sigma_q per dataset is required")

        self.n_datasets = len(self.spectra)
        self.reference = reference
        self.all_names = ModelParams.names(self.n_datasets)
        self.free = np.array([
            self.settings.fit_bg_mean or not name.startswith("bg_mean") for name in self.all_names
        ])
        if not self.free.all() and reference is None:
            raise ConfigurationError("Holding bg_mean fixed requires reference parameters")
        self.all_lower, self.all_upper = parameter_bounds(self.n_datasets, self.settings)

    @property
    def names(self) -> List[str]:
        return [n for n, f in zip(self.all_names, self.free) if f]

    @property
    def lower(self) -> np.ndarray:
        return self.all_lower[self.free]

    @property
    def upper(self) -> np.ndarray:
        return self.all_upper[self.free]

    @property
    def dataset_ids(self) -> List[str]:
        return [s.dataset_id for s in self.spectra]

    def pack(self, params: ModelParams) -> np.ndarray:
        return params.to_vector()[self.free]

    def unpack(self, vector: Sequence[float]) -> ModelParams:
        full = self.reference.to_vector() if self.reference is not None else np.zeros(self.free.size)
        full[self.free] = np.asarray(vector, dtype=float)
        return ModelParams.from_vector(full, self.n_datasets)

    def in_bounds(self, params: ModelParams) -> bool:
        vector = params.to_vector()
        if np.any(vector < self.all_lower) or np.any(vector > self.all_upper):
            return False
        return all(d.pressure > 0 and d.sigma_q > 0 for d in params.datasets)

    def log_likelihood(self, params: ModelParams) -> float:
        return sum(
            dataset_log_likelihood(spectrum, params.alpha, params.surface_temperature, dataset, self.settings)
            for spectrum, dataset in zip(self.spectra, params.datasets)
        )

    def log_constraints(self, params: ModelParams) -> float:
        return sum(
            sigma_q_log_constraint(d.sigma_q, centre, self.settings.sigma_q_constraint)
            for d, centre in zip(params.datasets, self.sigma_q_centres)
        )

    def log_posterior(self, params: ModelParams) -> float:
        if len(params.datasets) != self.n_datasets:
            raise DomainError(f"Expected {self.n_datasets} dataset parameter sets, got {len(params.datasets)}")
        if not self.in_bounds(params):
            return -np.inf
        try:
            return self.log_likelihood(params) + self.log_constraints(params)
        except (LikelihoodDomainError, DomainError) as e:
            logger.debug(f"Log-posterior outside its domain: {e}")
            return -np.inf

    def __call__(self, vector: Sequence[float]) -> float:
        return self.log_posterior(self.unpack(vector))


def joint_log_posterior(
    spectra: Sequence[BinnedSpectrum],
    params: ModelParams,
    settings: Optional[LikelihoodSettings] = None,
    sigma_q_centres: Optional[Sequence[float]] = None,
) -> float:
    """Sum of dataset log-likelihoods, sigma_q constraints and flat priors (-inf outside bounds)."""
    return JointModel(spectra, settings, sigma_q_centres, reference=params).log_posterior(params)


def simulate_spectrum(
    settings: LikelihoodSettings,
    alpha: float,
    surface_temperature: float,
    dataset: DatasetParams,
    live_time: float,
    rng: Optional[np.random.Generator] = None,
    edges: Optional[Sequence[float]] = None,
    metadata: Optional[dict] = None,
) -> BinnedSpectrum:
    """
    Binned spectrum drawn from the model expectation.

    Without ``rng`` the counts are the rounded expectation (an Asimov spectrum);
    otherwise they are negative-binomial draws with the settings' overdispersion.
    """
    edges = default_bin_edges() if edges is None else np.asarray(edges, dtype=float)
    meta = {
        "dataset_id": "simulated",
        "gas": settings.gas.name,
        "pressure": dataset.pressure,
        "sigma_q_calibration": dataset.sigma_q,
    }
    meta.update(metadata or {})
    empty = BinnedSpectrum(edges, np.zeros(edges.size - 1, dtype=np.int64), live_time, metadata=meta)
    mu = expected_bin_counts(empty, alpha, surface_temperature, dataset, settings)
    counts = np.rint(mu) if rng is None else nb_sample(mu, settings.overdispersion, rng)
    return BinnedSpectrum(edges, counts.astype(np.int64), live_time, metadata=meta)
