"""Histogramming of surviving candidates into live-time-corrected spectra."""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from src.config import ANALYSIS_RULES
from src.errors import BinningError
from src.recon.candidates import CandidateTable


@dataclass
class BinnedSpectrum:
    """Counts of |amplitude| per bin (keV/c edges) with the live time they were collected in."""

    bin_edges: np.ndarray
    counts: np.ndarray
    live_time: float
    raw_time: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.bin_edges = validate_bin_edges(self.bin_edges)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.size != self.bin_edges.size - 1:
            raise BinningError("One count per bin is required")
        if np.any(self.counts < 0):
            raise BinningError("Counts must be non-negative")
        if self.raw_time is not None and self.live_time > self.raw_time + 1e-9:
            raise BinningError("Live time cannot exceed raw time")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def rates(self) -> np.ndarray:
        """Differential rate per bin, s^-1 (keV/c)^-1."""
        if self.live_time <= 0:
            return np.zeros(self.counts.size)
        return self.counts / (self.live_time * self.widths)

    @property
    def dataset_id(self) -> str:
        return str(self.metadata.get("dataset_id", "dataset"))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def default_bin_edges() -> np.ndarray:
    spec = ANALYSIS_RULES["bin_edges"]
    return np.arange(spec["start"], spec["stop"] + 0.5 * spec["step"], spec["step"])


def validate_bin_edges(edges: Sequence[float]) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise BinningError("At least two bin edges are required")
    if np.any(np.diff(edges) <= 0):
        raise BinningError("Bin edges must be strictly ascending and non-overlapping")
    return edges


def bin_events(
    candidates: CandidateTable,
    edges: Optional[Sequence[float]] = None,
    live_time: Optional[float] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> BinnedSpectrum:
    """
    Histogram |amplitude| of candidates that passed every cut.

    Args:
        live_time: Exposure in s; defaults to the table's own live-time bookkeeping.
    """
    edges = validate_bin_edges(default_bin_edges() if edges is None else edges)
    passing = candidates.passing()
    counts, _ = np.histogram(candidates.abs_amplitude[passing], bins=edges)
    meta = {"cuts": candidates.cut_summary()} if len(candidates) else {}
    meta.update(metadata or {})
    return BinnedSpectrum(
        bin_edges=edges,
        counts=counts,
        live_time=candidates.live_time() if live_time is None else float(live_time),
        raw_time=candidates.raw_time,
        metadata=meta,
    )
