"""Simulated calibration runs and tuning of the readout noise to a target resolution."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from src.config import ANALYSIS_RULES, SIMULATION_DEFAULTS
from src.dynsim.impulses import pulses_at
from src.dynsim.oscillator import (
    NoiseConfig,
    OscillatorConfig,
    ReadoutTrace,
    default_noise_config,
    predicted_resolution,
    simulate_trajectory,
)
from src.errors import CalibrationError, DomainError
from src.recon.calibration import amplitudes_at
from src.recon.matched_filter import AmplitudeSeries, filter_trace

logger = logging.getLogger(__name__)

READOUT_BRACKET = (1e-18, 1e-9)  # m/sqrt(Hz)


@dataclass
class CalibrationRun:
    """Filtered trace of electric calibration pulses at known times."""

    trace: ReadoutTrace
    series: AmplitudeSeries
    times: np.ndarray
    amplitudes: np.ndarray

    @property
    def reconstructed(self) -> np.ndarray:
        return amplitudes_at(self.series, self.times)

    def groups(self) -> Dict[float, np.ndarray]:
        """Injected amplitude -> reconstructed amplitudes at the known lags."""
        reconstructed = self.reconstructed
        return {float(a): reconstructed[self.amplitudes == a] for a in np.unique(self.amplitudes)}

    def sample_indices(self, amplitude: Optional[float] = None) -> np.ndarray:
        mask = np.ones(self.times.size, dtype=bool) if amplitude is None else self.amplitudes == amplitude
        return np.rint(self.times[mask] * self.series.sample_rate).astype(np.int64)


def simulate_calibration_run(
    osc: OscillatorConfig,
    noise: NoiseConfig,
    amplitudes: Sequence[float],
    pulses_per_amplitude: int,
    rng: np.random.Generator,
    spacing: float = SIMULATION_DEFAULTS["calibration_spacing"],
    search_window: float = ANALYSIS_RULES["search_window"],
) -> CalibrationRun:
    """
    Simulate and filter a run of calibration pulses.

    Amplitudes are interleaved, one pulse every ``spacing`` seconds, each placed at the
    centre of a search window.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    n = amplitudes.size * int(pulses_per_amplitude)
    if n == 0:
        raise DomainError("A calibration run needs at least one pulse")
    sequence = np.tile(amplitudes, int(pulses_per_amplitude))
    times = spacing * np.arange(1, n + 1) + 0.5 * search_window
    duration = spacing * (n + 1)

    trace = simulate_trajectory(
        osc, noise, pulses_at(times, sequence), duration, rng,
        search_window=search_window, metadata={"calibration_run": True},
    )
    series = filter_trace(trace, osc)
    return CalibrationRun(trace, series, times, sequence)


def _solve_readout(osc: OscillatorConfig, base: NoiseConfig, target: float) -> float:
    def mismatch(density):
        return predicted_resolution(osc, base.with_readout(density)) - target

    lo, hi = READOUT_BRACKET
    if mismatch(lo) > 0:
        raise CalibrationError(
            f"Force noise alone limits the resolution to {predicted_resolution(osc, base.with_readout(lo)):.1f} keV/c "
            f"(target {target:.1f} keV/c)"
        )
    if mismatch(hi) < 0:
        raise CalibrationError(f"Target {target:.1f} keV/c not reachable within the readout-noise bracket")
    return float(brentq(mismatch, lo, hi, rtol=1e-6))


def calibrate_noise_floor(
    osc: OscillatorConfig,
    target_sigma_q: float,
    base_noise: Optional[NoiseConfig] = None,
    rng: Optional[np.random.Generator] = None,
    pulses: int = SIMULATION_DEFAULTS["calibration_pulses"],
    amplitude: float = SIMULATION_DEFAULTS["calibration_amplitude"],
    tolerance: float = SIMULATION_DEFAULTS["noise_tolerance"],
    acceptance: float = SIMULATION_DEFAULTS["noise_acceptance"],
    max_iterations: int = SIMULATION_DEFAULTS["noise_max_iterations"],
    return_history: bool = False,
) -> Union[NoiseConfig, Tuple[NoiseConfig, List[Dict[str, float]]]]:
    """
    Find the readout noise density giving a target matched-filter resolution.

    The analytic optimal-filter resolution seeds the density; it is then refined on
    simulated calibration pulses until the measured resolution is within ``tolerance``
    of the target. After ``max_iterations`` the best density is accepted if within
    ``acceptance``.

    Raises:
        DomainError: If the target is outside (0, 200] keV/c.
        CalibrationError: If no density reaches the target; carries the iteration history.
    """
    if not 0 < target_sigma_q <= 200:
        raise DomainError(f"Target resolution must lie in (0, 200] keV/c, got {target_sigma_q}")
    base = base_noise or default_noise_config()
    rng = rng or np.random.default_rng(SIMULATION_DEFAULTS["calibration_seed"])

    history: List[Dict[str, float]] = []
    goal = float(target_sigma_q)
    best: Optional[Tuple[float, NoiseConfig]] = None
    for iteration in range(max_iterations):
        density = _solve_readout(osc, base, goal)
        noise = base.with_readout(density)
        run = simulate_calibration_run(osc, noise, [amplitude], pulses, rng)
        measured = float(np.std(run.reconstructed - amplitude, ddof=1))
        error = measured / target_sigma_q - 1.0
        history.append({
            "iteration": iteration,
            "readout_noise_density": density,
            "predicted_sigma_q": predicted_resolution(osc, noise),
            "measured_sigma_q": measured,
            "relative_error": error,
        })
        logger.info(
            f"Noise calibration {iteration}: density={density:.3e} m/rtHz, "
            f"measured sigma_q={measured:.1f} keV/c (target {target_sigma_q:.1f})"
        )
        if best is None or abs(error) < abs(best[0]):
            best = (error, noise)
        if abs(error) <= tolerance:
            break
        goal *= target_sigma_q / measured

    if abs(best[0]) > acceptance:
        raise CalibrationError(
            f"Noise calibration missed {target_sigma_q} keV/c by {best[0]:+.1%} after {len(history)} iterations",
            history=history,
        )
    return (best[1], history) if return_history else best[1]
