"""Per-search-window event candidates."""

import enum
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from src.config import ANALYSIS_RULES
from src.errors import DomainError
from src.recon.matched_filter import AmplitudeSeries


class CandidateFlag(enum.IntFlag):
    NONE = 0
    NOISE = 1
    STABILITY = 2
    GOF = 4
    CALIBRATION_VETO = 8


LIVE_TIME_FLAGS = CandidateFlag.NOISE | CandidateFlag.STABILITY | CandidateFlag.CALIBRATION_VETO


@dataclass(frozen=True)
class EventCandidate:
    """Reconstructed impulse in one search window."""

    window_index: int
    sample_index: int
    time: float
    amplitude: float
    gof: float
    flags: CandidateFlag

    @property
    def abs_amplitude(self) -> float:
        return abs(self.amplitude)

    @property
    def noise_cut(self) -> bool:
        return bool(self.flags & CandidateFlag.NOISE)

    @property
    def stability_cut(self) -> bool:
        return bool(self.flags & CandidateFlag.STABILITY)

    @property
    def gof_cut(self) -> bool:
        return bool(self.flags & CandidateFlag.GOF)

    @property
    def calibration_veto(self) -> bool:
        return bool(self.flags & CandidateFlag.CALIBRATION_VETO)


class CandidateTable:
    """
    Columnar store of one candidate per search window.

    Flags can only be added, never cleared.
    """

    def __init__(
        self,
        sample_index: np.ndarray,
        amplitude: np.ndarray,
        sample_rate: float,
        search_window: float,
        gof: Optional[np.ndarray] = None,
        flags: Optional[np.ndarray] = None,
    ):
        self.sample_index = np.asarray(sample_index, dtype=np.int64)
        self.amplitude = np.asarray(amplitude, dtype=float)
        if self.sample_index.shape != self.amplitude.shape:
            raise DomainError("Candidate columns must have equal length")
        self.sample_rate = float(sample_rate)
        self.search_window = float(search_window)
        self.window_index = np.arange(self.amplitude.size)
        self.gof = np.full(self.amplitude.size, np.nan) if gof is None else np.asarray(gof, dtype=float)
        self._flags = np.zeros(self.amplitude.size, dtype=np.uint8) if flags is None else np.asarray(flags, dtype=np.uint8).copy()

    def __len__(self) -> int:
        return int(self.amplitude.size)

    def __getitem__(self, i: int) -> EventCandidate:
        return EventCandidate(
            window_index=int(self.window_index[i]),
            sample_index=int(self.sample_index[i]),
            time=float(self.time[i]),
            amplitude=float(self.amplitude[i]),
            gof=float(self.gof[i]),
            flags=CandidateFlag(int(self._flags[i])),
        )

    def __iter__(self) -> Iterator[EventCandidate]:
        for i in range(len(self)):
            yield self[i]

    @property
    def time(self) -> np.ndarray:
        return self.sample_index / self.sample_rate

    @property
    def abs_amplitude(self) -> np.ndarray:
        return np.abs(self.amplitude)

    @property
    def flags(self) -> np.ndarray:
        view = self._flags.view()
        view.setflags(write=False)
        return view

    def add_flag(self, mask: np.ndarray, flag: CandidateFlag):
        self._flags[np.asarray(mask, dtype=bool)] |= np.uint8(flag)

    def flagged(self, flag: CandidateFlag) -> np.ndarray:
        return (self._flags & np.uint8(flag)) != 0

    def passing(self) -> np.ndarray:
        return self._flags == 0

    @property
    def raw_time(self) -> float:
        return len(self) * self.search_window

    def live_time(self) -> float:
        """Raw exposure minus windows removed by the noise, stability and veto cuts."""
        removed = np.count_nonzero(self.flagged(LIVE_TIME_FLAGS))
        return (len(self) - removed) * self.search_window

    def cut_summary(self):
        return {
            "windows": len(self),
            "noise": int(np.count_nonzero(self.flagged(CandidateFlag.NOISE))),
            "stability": int(np.count_nonzero(self.flagged(CandidateFlag.STABILITY))),
            "gof": int(np.count_nonzero(self.flagged(CandidateFlag.GOF))),
            "calibration_veto": int(np.count_nonzero(self.flagged(CandidateFlag.CALIBRATION_VETO))),
            "passing": int(np.count_nonzero(self.passing())),
            "raw_time": self.raw_time,
            "live_time": self.live_time(),
        }


def scan_events(
    series: AmplitudeSeries,
    search_window: float = ANALYSIS_RULES["search_window"],
    shadow_separation: Optional[int] = None,
) -> CandidateTable:
    """
    Record the largest |amplitude| of every search window, keeping its sign.

    When the extrema of neighbouring windows lie closer than ``shadow_separation``
    samples, the smaller one is the flank of the same impulse; its window is
    re-scanned with the dominant peak's neighbourhood excluded.
    """
    width = int(round(search_window * series.sample_rate))
    n_windows = series.n_samples // width
    blocks = series.values[: n_windows * width].reshape(n_windows, width)
    offsets = np.argmax(np.abs(blocks), axis=1)

    if shadow_separation and n_windows > 1:
        offsets = _suppress_shadows(blocks, offsets, width, int(shadow_separation))

    rows = np.arange(n_windows)
    sample_index = rows * width + offsets
    return CandidateTable(sample_index, blocks[rows, offsets], series.sample_rate, search_window)


def _suppress_shadows(blocks: np.ndarray, offsets: np.ndarray, width: int, separation: int) -> np.ndarray:
    peaks = np.abs(blocks[np.arange(blocks.shape[0]), offsets])
    position = np.arange(blocks.shape[0]) * width + offsets
    close = np.flatnonzero(np.diff(position) < separation)
    if close.size == 0:
        return offsets

    exclusions = {}
    for left in close:
        right = left + 1
        if peaks[left] >= peaks[right]:
            shadow, dominant = right, left
        else:
            shadow, dominant = left, right
        exclusions.setdefault(shadow, []).append(position[dominant])

    offsets = offsets.copy()
    local = np.arange(width)
    for shadow, centres in exclusions.items():
        samples = shadow * width + local
        excluded = np.zeros(width, dtype=bool)
        for centre in centres:
            excluded |= np.abs(samples - centre) < separation
        if np.all(excluded):
            continue
        values = np.abs(blocks[shadow])
        values[excluded] = -1.0
        offsets[shadow] = int(np.argmax(values))
    return offsets
