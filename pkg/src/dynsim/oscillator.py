"""Damped harmonic oscillator readout simulation with impulsive and stochastic forcing."""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from scipy.integrate import quad
from scipy.signal import lfilter

from src.config import ANALYSIS_RULES, SIMULATION_DEFAULTS
from src.errors import ConfigurationError, DomainError
from src.dynsim.impulses import ImpulseTrain
from src.kinetics import Environment, SphereSurface, collisional_force_density, get_gas
from src.kinetics.units import KEV_C

logger = logging.getLogger(__name__)

BLOCK_SIZE = 1 << 20


@dataclass(frozen=True)
class OscillatorConfig:
    """z-mode oscillator: mass (kg), f0 = Omega_z / 2pi (Hz), gamma / 2pi (Hz), sample rate (1/s)."""

    mass: float = SIMULATION_DEFAULTS["mass"]
    resonance_frequency: float = SIMULATION_DEFAULTS["resonance_frequency"]
    damping_rate: float = SIMULATION_DEFAULTS["damping_rate"]
    sample_rate: float = SIMULATION_DEFAULTS["sample_rate"]

    def __post_init__(self):
        for name in ("mass", "resonance_frequency", "damping_rate", "sample_rate"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"OscillatorConfig.{name} must be positive")
        if self.damping_rate >= self.resonance_frequency:
            raise ConfigurationError("Oscillator must be underdamped (damping_rate < resonance_frequency)")
        if self.resonance_frequency > self.sample_rate / 2:
            raise ConfigurationError("Resonance frequency exceeds the Nyquist frequency")

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.resonance_frequency

    @property
    def gamma(self) -> float:
        return 2.0 * np.pi * self.damping_rate

    @property
    def omega_damped(self) -> float:
        return float(np.sqrt(self.omega ** 2 - 0.25 * self.gamma ** 2))

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega_damped

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class NoiseConfig:
    """
    Noise model of the readout.

    readout_noise_density is a white position floor (m/sqrt(Hz)); the two force terms
    are white one-sided amplitudes (N/sqrt(Hz)) that add in power. The monitor drift
    sets the fractional RMS and correlation time (s) of the synthetic monitor power.
    """

    readout_noise_density: float = SIMULATION_DEFAULTS["readout_noise_density"]
    thermal_force_density: float = 0.0
    backaction_force_density: float = SIMULATION_DEFAULTS["backaction_force_density"]
    monitor_fractional_rms: float = SIMULATION_DEFAULTS["monitor_fractional_rms"]
    monitor_correlation_time: float = SIMULATION_DEFAULTS["monitor_correlation_time"]

    def __post_init__(self):
        for name in ("readout_noise_density", "thermal_force_density", "backaction_force_density",
                     "monitor_fractional_rms"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"NoiseConfig.{name} must be >= 0")
        if not self.monitor_correlation_time > 0:
            raise ConfigurationError("NoiseConfig.monitor_correlation_time must be positive")

    @property
    def force_psd(self) -> float:
        """Total one-sided white force PSD, N^2/Hz."""
        return self.thermal_force_density ** 2 + self.backaction_force_density ** 2

    def with_readout(self, density: float) -> "NoiseConfig":
        return NoiseConfig(
            readout_noise_density=density,
            thermal_force_density=self.thermal_force_density,
            backaction_force_density=self.backaction_force_density,
            monitor_fractional_rms=self.monitor_fractional_rms,
            monitor_correlation_time=self.monitor_correlation_time,
        )

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def silent(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0, 0.0, SIMULATION_DEFAULTS["monitor_correlation_time"])


def default_noise_config(**overrides) -> NoiseConfig:
    """NoiseConfig with the residual background-gas force noise filled in."""
    gas = get_gas(SIMULATION_DEFAULTS["background_gas"])
    thermal = collisional_force_density(
        gas,
        Environment(pressure=SIMULATION_DEFAULTS["background_pressure"]),
        SphereSurface(accommodation=1.0),
    )
    values = {"thermal_force_density": thermal}
    values.update(overrides)
    return NoiseConfig(**values)


@dataclass
class ReadoutTrace:
    """Sampled z positions (m), monitor power per search window and optional truth."""

    samples: np.ndarray
    sample_rate: float
    duration: float
    monitor_power: np.ndarray
    truth: Optional[ImpulseTrain] = None
    search_window: float = ANALYSIS_RULES["search_window"]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        expected = int(round(self.duration * self.sample_rate))
        if self.samples.size != expected:
            raise DomainError(f"Trace has {self.samples.size} samples, expected {expected}")
        if self.monitor_power.size != monitor_length(self.duration, self.search_window):
            raise DomainError("Monitor series length does not match the search-window count")

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate


def monitor_length(duration: float, search_window: float) -> int:
    return int(round(duration / search_window))


def filter_coefficients(osc: OscillatorConfig):
    """IIR coefficients mapping velocity kicks to sampled positions exactly."""
    a = 0.5 * osc.gamma * osc.dt
    b = osc.omega_damped * osc.dt
    decay = np.exp(-a)
    numerator = np.array([0.0, decay * np.sin(b) / osc.omega_damped])
    denominator = np.array([1.0, -2.0 * decay * np.cos(b), decay ** 2])
    return numerator, denominator


def green_function(osc: OscillatorConfig, t) -> np.ndarray:
    """Analytic position response (m) to a unit velocity kick at t = 0."""
    t = np.asarray(t, dtype=float)
    response = np.exp(-0.5 * osc.gamma * t) * np.sin(osc.omega_damped * t) / osc.omega_damped
    return np.where(t >= 0, response, 0.0)


def impulse_response(osc: OscillatorConfig, n_samples: int) -> np.ndarray:
    """Sampled readout response (m) to a 1 keV/c impulse at sample 0."""
    kick = np.zeros(n_samples)
    kick[0] = KEV_C / osc.mass
    b, a = filter_coefficients(osc)
    return lfilter(b, a, kick)


def susceptibility(osc: OscillatorConfig, frequency) -> np.ndarray:
    """Mechanical susceptibility chi(f) in m/N."""
    w = 2.0 * np.pi * np.asarray(frequency, dtype=float)
    return 1.0 / (osc.mass * (osc.omega ** 2 - w ** 2 - 1j * osc.gamma * w))


def equipartition_variance(osc: OscillatorConfig, noise: NoiseConfig) -> float:
    """Position variance (m^2) driven by the white force noise alone."""
    return noise.force_psd / (4.0 * osc.mass ** 2 * osc.gamma * osc.omega ** 2)


def predicted_resolution(osc: OscillatorConfig, noise: NoiseConfig) -> float:
    """
    Optimal-filter impulse resolution in keV/c for white readout and force noise.

    A fully noiseless configuration returns 0.
    """
    s_x = noise.readout_noise_density ** 2
    s_f = noise.force_psd
    if s_x == 0.0 and s_f == 0.0:
        return 0.0

    def integrand(f):
        chi2 = abs(susceptibility(osc, f)) ** 2
        return chi2 / (s_x + chi2 * s_f)

    nyquist = osc.sample_rate / 2
    f0 = osc.resonance_frequency
    pieces = [(0.0, 0.5 * f0), (0.5 * f0, 2.0 * f0), (2.0 * f0, nyquist)]
    information = 0.0
    for lo, hi in pieces:
        value, _ = quad(integrand, lo, hi, points=[f0] if lo < f0 < hi else None, limit=400)
        information += value
    return float(1.0 / np.sqrt(4.0 * information) / KEV_C)


def simulate_monitor(
    duration: float,
    search_window: float,
    noise: NoiseConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Positive, mean-one monitor power per search window (log-normal AR(1) series)."""
    n = monitor_length(duration, search_window)
    if n == 0:
        return np.empty(0)
    if noise.monitor_fractional_rms == 0:
        return np.ones(n)
    rho = np.exp(-search_window / noise.monitor_correlation_time)
    eps = rng.standard_normal(n)
    start = rng.standard_normal()
    log_power, _ = lfilter([np.sqrt(1.0 - rho ** 2)], [1.0, -rho], eps, zi=[rho * start])
    s = np.sqrt(np.log1p(noise.monitor_fractional_rms ** 2))
    return np.exp(s * log_power - 0.5 * s ** 2)


def simulate_trajectory(
    osc: OscillatorConfig,
    noise: NoiseConfig,
    train: ImpulseTrain,
    duration: float,
    rng: np.random.Generator,
    search_window: float = ANALYSIS_RULES["search_window"],
    metadata: Optional[Dict[str, Any]] = None,
) -> ReadoutTrace:
    """
    Integrate m z'' + m gamma z' + m Omega^2 z = F_noise + sum q_i delta(t - t_i).

    Impulses and white force noise enter as velocity kicks at sample boundaries and are
    propagated with the exact discrete-time recursion of the oscillator, so the
    single-impulse response equals the analytic Green's function at every sample.
    Readout noise is added afterwards.

    Raises:
        DomainError: If the train extends past the duration.
    """
    if not duration > 0:
        raise DomainError(f"Duration must be positive, got {duration}")
    if not train.within(duration):
        raise DomainError("Impulse train extends beyond the trace duration")

    n = int(round(duration * osc.sample_rate))
    kick_index = np.minimum(np.rint(train.times * osc.sample_rate).astype(np.int64), n - 1)
    kick_velocity = train.amplitudes * KEV_C / osc.mass

    b, a = filter_coefficients(osc)
    force_kick_sigma = np.sqrt(noise.force_psd * osc.dt / 2.0) / osc.mass
    readout_sigma = noise.readout_noise_density * np.sqrt(osc.sample_rate / 2.0)

    samples = np.empty(n)
    state = np.zeros(2)
    for start in range(0, n, BLOCK_SIZE):
        stop = min(start + BLOCK_SIZE, n)
        if force_kick_sigma > 0:
            kicks = force_kick_sigma * rng.standard_normal(stop - start)
        else:
            kicks = np.zeros(stop - start)
        in_block = (kick_index >= start) & (kick_index < stop)
        np.add.at(kicks, kick_index[in_block] - start, kick_velocity[in_block])
        block, state = lfilter(b, a, kicks, zi=state)
        if readout_sigma > 0:
            block += readout_sigma * rng.standard_normal(stop - start)
        samples[start:stop] = block

    monitor = simulate_monitor(duration, search_window, noise, rng)
    meta = {"oscillator": osc.to_dict(), "noise": noise.to_dict()}
    meta.update(metadata or {})
    logger.debug(f"Simulated {n} samples with {len(train)} impulses")
    return ReadoutTrace(samples, osc.sample_rate, duration, monitor, train, search_window, meta)
