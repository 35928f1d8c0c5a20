"""Impulse reconstruction: matched filtering, event search, data-quality cuts and binning."""

from src.recon.matched_filter import AmplitudeSeries, NoisePSD, estimate_noise_psd, filter_trace, matched_filter
from src.recon.candidates import CandidateFlag, CandidateTable, EventCandidate, scan_events
from src.recon.template import Template, build_template, extract_segments, load_template, save_template
from src.recon.cuts import (
    apply_gof_cut,
    apply_noise_cut,
    apply_stability_cut,
    compute_gof,
    gof_threshold,
    veto_calibration,
)
from src.recon.calibration import ResolutionReport, amplitudes_at, measure_resolution_and_linearity
from src.recon.binning import BinnedSpectrum, bin_events, default_bin_edges
from src.recon.io import read_events, read_spectrum, write_events, write_spectrum
from src.recon.chain import (
    DetectorCalibration,
    Reconstruction,
    calibrate_detector,
    load_calibration,
    reconstruct_trace,
    save_calibration,
)

__all__ = [
    "AmplitudeSeries",
    "BinnedSpectrum",
    "CandidateFlag",
    "CandidateTable",
    "DetectorCalibration",
    "EventCandidate",
    "NoisePSD",
    "Reconstruction",
    "ResolutionReport",
    "Template",
    "amplitudes_at",
    "apply_gof_cut",
    "apply_noise_cut",
    "apply_stability_cut",
    "bin_events",
    "build_template",
    "calibrate_detector",
    "compute_gof",
    "default_bin_edges",
    "estimate_noise_psd",
    "extract_segments",
    "filter_trace",
    "gof_threshold",
    "load_calibration",
    "load_template",
    "matched_filter",
    "measure_resolution_and_linearity",
    "read_events",
    "read_spectrum",
    "reconstruct_trace",
    "save_calibration",
    "save_template",
    "scan_events",
    "veto_calibration",
    "write_events",
    "write_spectrum",
]
