"""Average reconstructed-amplitude response to a calibration impulse."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.config import ANALYSIS_RULES
from src.errors import DomainError, InsufficientStatisticsError
from src.recon.matched_filter import AmplitudeSeries


@dataclass(frozen=True)
class Template:
    """Unit-peak response shape; the peak sits at ``reference_index``."""

    waveform: np.ndarray
    sample_rate: float
    reference_index: int
    n_segments: int

    @property
    def span(self) -> float:
        return self.waveform.size / self.sample_rate

    @property
    def half_width(self) -> int:
        return self.reference_index


def extract_segments(series: AmplitudeSeries, sample_indices: Sequence[int], half_width: int) -> np.ndarray:
    """Slices of ``2 * half_width + 1`` samples centred on each index; edge slices are skipped."""
    indices = np.asarray(sample_indices, dtype=np.int64)
    keep = (indices - half_width >= 0) & (indices + half_width < series.n_samples)
    offsets = np.arange(-half_width, half_width + 1)
    return series.values[indices[keep, None] + offsets[None, :]]


def build_template(
    segments: np.ndarray,
    sample_rate: float,
    min_segments: int = ANALYSIS_RULES["template_min_segments"],
) -> Template:
    """
    Pointwise mean of calibration segments, normalized to unit peak.

    Raises:
        InsufficientStatisticsError: With fewer than ``min_segments`` segments.
    """
    segments = np.atleast_2d(np.asarray(segments, dtype=float))
    if segments.shape[0] < min_segments:
        raise InsufficientStatisticsError(
            f"Template needs at least {min_segments} calibration segments, got {segments.shape[0]}"
        )
    mean = segments.mean(axis=0)
    reference = int(np.argmax(np.abs(mean)))
    if mean[reference] == 0:
        raise DomainError("Calibration segments average to zero")
    return Template(mean / mean[reference], float(sample_rate), reference, int(segments.shape[0]))


def template_half_width(period: float, sample_rate: float) -> int:
    """Samples on each side covering the goodness-of-fit span."""
    return int(np.ceil(ANALYSIS_RULES["gof_half_span_periods"] * period * sample_rate))


def save_template(template: Template, path) -> None:
    np.savez(
        path,
        waveform=template.waveform,
        sample_rate=template.sample_rate,
        reference_index=template.reference_index,
        n_segments=template.n_segments,
    )


def load_template(path) -> Template:
    with np.load(path) as data:
        return Template(
            np.array(data["waveform"]),
            float(data["sample_rate"]),
            int(data["reference_index"]),
            int(data["n_segments"]),
        )
