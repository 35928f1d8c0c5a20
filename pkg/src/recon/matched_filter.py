"""Fourier-domain optimal filtering of readout traces in fixed analysis windows."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.signal import spectrogram

from src.config import ANALYSIS_RULES
from src.dynsim.oscillator import OscillatorConfig, ReadoutTrace, impulse_response
from src.errors import DomainError

logger = logging.getLogger(__name__)

PSD_FLOOR = 1e-6  # relative to the median PSD


@dataclass
class NoisePSD:
    """One-sided PSD estimate; ``usable`` is False when no clean segments were found."""

    frequencies: np.ndarray
    power: np.ndarray
    segments_used: int
    segments_total: int
    usable: bool = True


@dataclass
class AmplitudeSeries:
    """Reconstructed impulse amplitude (keV/c) at every lag of a trace."""

    values: np.ndarray
    sample_rate: float
    window_samples: int
    degraded_windows: List[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return int(self.values.size)

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def estimate_noise_psd(
    data: np.ndarray,
    sample_rate: float,
    nperseg: int = ANALYSIS_RULES["psd_segment"],
    band: Optional[Tuple[float, float]] = None,
    max_mads: float = ANALYSIS_RULES["psd_outlier_mads"],
    min_segments: int = ANALYSIS_RULES["psd_min_segments"],
) -> NoisePSD:
    """
    Average periodograms of non-overlapping segments, dropping impulse-loaded ones.

    Segments whose in-band power exceeds median + max_mads * 1.4826 * MAD are treated as
    containing large impulses and excluded.
    """
    frequencies, _, power = spectrogram(
        data, fs=sample_rate, window="hann", nperseg=nperseg, noverlap=0,
        detrend="constant", scaling="density", mode="psd",
    )
    total = power.shape[1] if power.ndim == 2 else 0
    if total == 0:
        return NoisePSD(frequencies, np.zeros_like(frequencies), 0, 0, usable=False)

    if band is None:
        in_band = np.ones(frequencies.size, dtype=bool)
    else:
        in_band = (frequencies >= band[0]) & (frequencies <= band[1])
    segment_power = power[in_band].sum(axis=0)
    median = np.median(segment_power)
    mad = 1.4826 * np.median(np.abs(segment_power - median))
    keep = segment_power <= median + max_mads * mad if mad > 0 else np.ones(total, dtype=bool)

    used = int(keep.sum())
    mean_power = power[:, keep].mean(axis=1) if used else np.zeros(frequencies.size)
    usable = used >= min_segments and np.any(mean_power > 0)
    return NoisePSD(frequencies, mean_power, used, total, usable=bool(usable))


def matched_filter(
    window: np.ndarray,
    impulse_response: np.ndarray,
    noise_psd: Optional[NoisePSD],
    sample_rate: float,
) -> Tuple[np.ndarray, bool]:
    """
    Optimal amplitude estimate at every lag of one analysis window.

    The estimate is the inverse-noise-weighted correlation of the data with the
    single-impulse response, normalized so a noiseless impulse of amplitude q returns
    q at its arrival lag. The DC bin carries no weight.

    Returns:
        (amplitudes in keV/c, degraded) where degraded marks a white-noise fallback.
    """
    n = window.size
    if impulse_response.size != n:
        raise DomainError("Impulse response must match the window length")

    response_f = np.fft.rfft(impulse_response)
    frequencies = np.fft.rfftfreq(n, d=1.0 / sample_rate)

    degraded = noise_psd is None or not noise_psd.usable
    if degraded:
        weight = np.ones(frequencies.size)
    else:
        power = np.interp(frequencies, noise_psd.frequencies, noise_psd.power)
        floor = PSD_FLOOR * np.median(noise_psd.power[noise_psd.power > 0])
        weight = 1.0 / np.maximum(power, floor)
    weight[0] = 0.0

    data_f = np.fft.rfft(window)
    numerator = np.fft.irfft(np.conj(response_f) * data_f * weight, n=n)
    normalization = np.fft.irfft(np.abs(response_f) ** 2 * weight, n=n)[0]
    if normalization <= 0:
        return np.zeros(n), True
    return numerator / normalization, degraded


def filter_trace(
    trace: ReadoutTrace,
    osc: OscillatorConfig,
    window_length: float = ANALYSIS_RULES["analysis_window"],
    padding: float = ANALYSIS_RULES["window_padding"],
) -> AmplitudeSeries:
    """
    Reconstruct amplitudes over a whole trace, one filter per analysis window.

    Each window is extended by ``padding`` on both sides before filtering and the
    padding is discarded, so impulses near window edges do not wrap around.
    """
    fs = trace.sample_rate
    window_samples = int(round(window_length * fs))
    pad = int(round(padding * fs))
    n = trace.n_samples
    values = np.zeros(n)
    degraded_windows = []

    band = (0.25 * osc.resonance_frequency, 4.0 * osc.resonance_frequency)
    response_cache = {}
    for index, start in enumerate(range(0, n, window_samples)):
        stop = min(start + window_samples, n)
        lo, hi = max(start - pad, 0), min(stop + pad, n)
        segment = trace.samples[lo:hi]
        length = segment.size
        if length not in response_cache:
            response_cache[length] = impulse_response(osc, length)

        if not np.any(segment):
            degraded_windows.append(index)
            continue
        psd = estimate_noise_psd(segment, fs, band=band)
        amplitudes, degraded = matched_filter(segment, response_cache[length], psd, fs)
        if degraded:
            degraded_windows.append(index)
            logger.warning(
                f"Analysis window {index}: no usable noise PSD "
                f"({psd.segments_used}/{psd.segments_total} segments), white filter used"
            )
        values[start:stop] = amplitudes[start - lo:stop - lo]

    return AmplitudeSeries(values, fs, window_samples, degraded_windows)
