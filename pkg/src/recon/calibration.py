"""Resolution and linearity from reconstructed calibration pulses."""

from dataclasses import asdict, dataclass
from typing import Dict, Sequence

import numpy as np
from scipy.optimize import curve_fit

from src.config import ANALYSIS_RULES
from src.errors import InsufficientStatisticsError
from src.recon.matched_filter import AmplitudeSeries


@dataclass(frozen=True)
class ResolutionReport:
    """Per-amplitude resolution and the reconstructed-vs-injected straight-line fit."""

    amplitudes: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray
    counts: np.ndarray
    slope: float
    intercept: float
    slope_error: float
    intercept_error: float

    def sigma_at(self, amplitude: float) -> float:
        return float(np.interp(amplitude, self.amplitudes, self.sigmas))

    def to_dict(self) -> Dict:
        data = asdict(self)
        for key in ("amplitudes", "means", "sigmas", "counts"):
            data[key] = np.asarray(data[key]).tolist()
        return data


def amplitudes_at(series: AmplitudeSeries, times: Sequence[float]) -> np.ndarray:
    """Reconstructed amplitudes at known impulse times (no search)."""
    index = np.rint(np.asarray(times, dtype=float) * series.sample_rate).astype(np.int64)
    index = np.clip(index, 0, series.n_samples - 1)
    return series.values[index]


def _line(x, slope, intercept):
    return slope * x + intercept


def measure_resolution_and_linearity(
    groups: Dict[float, Sequence[float]],
    min_pulses: int = ANALYSIS_RULES["template_min_segments"],
) -> ResolutionReport:
    """
    Gaussian width of (reconstructed - injected) per amplitude and a weighted line fit.

    Args:
        groups: Injected amplitude (keV/c) -> reconstructed amplitudes at the known lags.

    Raises:
        InsufficientStatisticsError: If any group has fewer than ``min_pulses`` pulses.
    """
    amplitudes = np.array(sorted(groups), dtype=float)
    means, sigmas, counts = [], [], []
    for amplitude in amplitudes:
        values = np.asarray(groups[amplitude], dtype=float)
        if values.size < min_pulses:
            raise InsufficientStatisticsError(
                f"{values.size} pulses at {amplitude} keV/c; at least {min_pulses} are required"
            )
        means.append(values.mean())
        sigmas.append(values.std(ddof=1))
        counts.append(values.size)
    means, sigmas, counts = np.array(means), np.array(sigmas), np.array(counts)

    if amplitudes.size >= 2:
        errors = np.maximum(sigmas / np.sqrt(counts), 1e-9)
        popt, pcov = curve_fit(_line, amplitudes, means, p0=[1.0, 0.0], sigma=errors, absolute_sigma=True)
        slope, intercept = popt
        slope_error, intercept_error = np.sqrt(np.diag(pcov))
    else:
        slope, intercept = means[0] / amplitudes[0], 0.0
        slope_error, intercept_error = np.nan, np.nan

    return ResolutionReport(
        amplitudes, means, sigmas, counts,
        float(slope), float(intercept), float(slope_error), float(intercept_error),
    )
