"""Data-selection cuts on event candidates."""

import logging
from typing import Dict, Optional

import numpy as np

from src.config import ANALYSIS_RULES
from src.dynsim.impulses import ImpulseTrain
from src.errors import AlignmentError, DetectorResponseError
from src.recon.candidates import CandidateFlag, CandidateTable
from src.recon.matched_filter import AmplitudeSeries
from src.recon.template import Template

logger = logging.getLogger(__name__)


def robust_sigma(values: np.ndarray) -> float:
    """1.4826 * median absolute deviation."""
    return float(1.4826 * np.median(np.abs(values - np.median(values))))


def surrounding_rms(
    series: AmplitudeSeries,
    sample_index: np.ndarray,
    region: float = ANALYSIS_RULES["noise_cut_region"],
    exclusion: int = 0,
) -> np.ndarray:
    """RMS of the series within +-region/2 of each index, skipping +-exclusion samples."""
    half = int(round(0.5 * region * series.sample_rate))
    cumulative = np.concatenate([[0.0], np.cumsum(series.values ** 2)])
    n = series.n_samples

    def window_sum(lo, hi):
        lo = np.clip(lo, 0, n)
        hi = np.clip(hi, 0, n)
        return cumulative[hi] - cumulative[lo], hi - lo

    outer_sum, outer_count = window_sum(sample_index - half, sample_index + half + 1)
    inner_sum, inner_count = window_sum(sample_index - exclusion, sample_index + exclusion + 1)
    count = np.maximum(outer_count - inner_count, 1)
    return np.sqrt(np.maximum(outer_sum - inner_sum, 0.0) / count)


def apply_noise_cut(
    candidates: CandidateTable,
    series: AmplitudeSeries,
    exclusion: int = 0,
    n_sigma: float = ANALYSIS_RULES["cut_sigma"],
    region: float = ANALYSIS_RULES["noise_cut_region"],
) -> Dict[str, float]:
    """
    Flag candidates whose surrounding RMS (impulse excluded) exceeds mean + n_sigma std.

    Returns:
        Cut statistics: mean, std and flagged fraction.
    """
    rms = surrounding_rms(series, candidates.sample_index, region, exclusion)
    mean, std = float(rms.mean()), float(rms.std())
    flagged = rms > mean + n_sigma * std if std > 0 else np.zeros(rms.size, dtype=bool)
    candidates.add_flag(flagged, CandidateFlag.NOISE)
    fraction = float(flagged.mean()) if flagged.size else 0.0
    logger.debug(f"Noise cut flagged {fraction:.1%} of windows")
    return {"mean": mean, "std": std, "fraction": fraction}


def apply_stability_cut(
    candidates: CandidateTable,
    monitor_power: np.ndarray,
    n_sigma: float = ANALYSIS_RULES["cut_sigma"],
) -> Dict[str, float]:
    """
    Flag windows whose monitor power falls below mean - n_sigma std.

    Raises:
        AlignmentError: If the monitor series does not have one value per window.
    """
    monitor = np.asarray(monitor_power, dtype=float)
    if monitor.size != len(candidates):
        raise AlignmentError(f"Monitor series has {monitor.size} values for {len(candidates)} search windows")
    mean, std = float(monitor.mean()), float(monitor.std())
    flagged = monitor < mean - n_sigma * std if std > 0 else np.zeros(monitor.size, dtype=bool)
    candidates.add_flag(flagged, CandidateFlag.STABILITY)
    fraction = float(flagged.mean()) if flagged.size else 0.0
    return {"mean": mean, "std": std, "fraction": fraction}


def compute_gof(
    candidates: CandidateTable,
    series: AmplitudeSeries,
    template: Template,
    min_amplitude: float = ANALYSIS_RULES["threshold"],
    alignment: int = ANALYSIS_RULES["gof_alignment_samples"],
    noise_sigma: Optional[float] = None,
) -> np.ndarray:
    """
    Template mismatch of each candidate with |amplitude| >= min_amplitude.

    The local waveform is compared with the least-squares scaled template at the best
    alignment within +-alignment samples; gof is the residual sum of squares per sample
    in units of the series' robust noise variance. Other candidates get NaN.
    """
    if noise_sigma is None:
        stride = max(1, series.n_samples // 1_000_000)
        noise_sigma = robust_sigma(series.values[::stride])
    sigma = noise_sigma
    sigma = max(sigma, 1e-12)
    half = template.reference_index
    length = template.waveform.size
    waveform = template.waveform

    selected = np.flatnonzero(candidates.abs_amplitude >= min_amplitude)
    centre = candidates.sample_index[selected]
    inside = (centre - half - alignment >= 0) & (centre - half + length + alignment <= series.n_samples)
    selected, centre = selected[inside], centre[inside]

    gof = np.full(len(candidates), np.nan)
    if selected.size == 0:
        return gof

    norm = np.dot(waveform, waveform)
    best = np.full(selected.size, np.inf)
    offsets = np.arange(length)
    chunk_size = 4096
    for shift in range(-alignment, alignment + 1):
        start = centre - half + shift
        for lo in range(0, selected.size, chunk_size):
            idx = start[lo:lo + chunk_size, None] + offsets[None, :]
            local = series.values[idx]
            scale = local @ waveform / norm
            residual = local - scale[:, None] * waveform[None, :]
            best[lo:lo + chunk_size] = np.minimum(best[lo:lo + chunk_size], np.sum(residual ** 2, axis=1))

    gof[selected] = best / (length * sigma ** 2)
    candidates.gof[selected] = gof[selected]
    return gof


def gof_threshold(calibration_gof: np.ndarray, percentile: float = ANALYSIS_RULES["gof_percentile"]) -> float:
    """Cut value leaving (100 - percentile)% of calibration pulses above it."""
    values = np.asarray(calibration_gof, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise DetectorResponseError("No calibration goodness-of-fit values available")
    return float(np.percentile(values, percentile))


def apply_gof_cut(
    candidates: CandidateTable,
    series: AmplitudeSeries,
    template: Template,
    threshold: float,
    min_amplitude: float = ANALYSIS_RULES["threshold"],
    noise_sigma: Optional[float] = None,
) -> Dict[str, float]:
    """Flag above-threshold candidates whose gof exceeds the calibration-derived threshold."""
    gof = compute_gof(candidates, series, template, min_amplitude, noise_sigma=noise_sigma)
    evaluated = np.isfinite(gof)
    flagged = evaluated & (gof > threshold)
    candidates.add_flag(flagged, CandidateFlag.GOF)
    evaluated_count = int(evaluated.sum())
    return {
        "threshold": float(threshold),
        "evaluated": evaluated_count,
        "fraction": float(flagged.sum() / evaluated_count) if evaluated_count else 0.0,
    }


def veto_calibration(
    candidates: CandidateTable,
    schedule: Optional[ImpulseTrain],
    margin: int = ANALYSIS_RULES["veto_windows"],
    min_amplitude: float = ANALYSIS_RULES["veto_min_amplitude"],
) -> int:
    """
    Tag candidates within +-margin search windows of each scheduled calibration pulse.

    Raises:
        DetectorResponseError: If a scheduled pulse is not reconstructed above min_amplitude.

    Returns:
        Number of vetoed windows.
    """
    if schedule is None or len(schedule) == 0:
        return 0
    n = len(candidates)
    pulse_windows = np.floor(schedule.times / candidates.search_window + 1e-9).astype(np.int64)
    vetoed = np.zeros(n, dtype=bool)
    missing = []
    for t, window in zip(schedule.times, pulse_windows):
        lo, hi = max(window - margin, 0), min(window + margin + 1, n)
        if lo >= hi:
            continue
        vetoed[lo:hi] = True
        if np.max(candidates.abs_amplitude[lo:hi]) < min_amplitude:
            missing.append(float(t))

    candidates.add_flag(vetoed, CandidateFlag.CALIBRATION_VETO)
    if missing:
        raise DetectorResponseError(
            f"{len(missing)} calibration pulses not reconstructed above {min_amplitude} keV/c "
            f"(first at t={missing[0]:.4f} s)"
        )
    return int(vetoed.sum())
