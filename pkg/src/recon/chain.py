"""Reconstruction chain: filter, scan, cut and bin one trace."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from src.config import ANALYSIS_RULES, SCHEMA_VERSION, SIMULATION_DEFAULTS
from src.dynsim.impulses import ImpulseOrigin, ImpulseTrain
from src.dynsim.oscillator import OscillatorConfig, ReadoutTrace
from src.dynsim.trace_io import check_schema_version
from src.recon.binning import BinnedSpectrum, bin_events
from src.recon.calibration import ResolutionReport, amplitudes_at, measure_resolution_and_linearity
from src.recon.candidates import CandidateTable, scan_events
from src.recon.cuts import (
    apply_gof_cut,
    apply_noise_cut,
    apply_stability_cut,
    compute_gof,
    gof_threshold,
    veto_calibration,
)
from src.recon.matched_filter import AmplitudeSeries, filter_trace
from src.recon.template import (
    Template,
    build_template,
    extract_segments,
    load_template,
    save_template,
    template_half_width,
)

logger = logging.getLogger(__name__)


@dataclass
class DetectorCalibration:
    """Everything the data chain needs from a calibration run."""

    template: Template
    gof_threshold: float
    sigma_q: float
    calibration_gof: np.ndarray
    linearity: Optional[ResolutionReport] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma_q": self.sigma_q,
            "gof_threshold": self.gof_threshold,
            "template_segments": self.template.n_segments,
            "template_span_s": self.template.span,
            "linearity": self.linearity.to_dict() if self.linearity else None,
        }


@dataclass
class Reconstruction:
    series: AmplitudeSeries
    candidates: CandidateTable
    spectrum: BinnedSpectrum
    cut_stats: Dict[str, Any] = field(default_factory=dict)


def shadow_separation(osc: OscillatorConfig) -> int:
    return int(round(ANALYSIS_RULES["impulse_exclusion_periods"] * osc.period * osc.sample_rate))


def calibrate_detector(
    run,
    osc: OscillatorConfig,
    reference_amplitude: float = SIMULATION_DEFAULTS["calibration_amplitude"],
    linearity_run=None,
) -> DetectorCalibration:
    """
    Template, gof threshold and resolution from a simulated calibration run.

    Args:
        run: CalibrationRun with pulses at ``reference_amplitude``.
        linearity_run: Optional CalibrationRun spanning several amplitudes.
    """
    indices = run.sample_indices(reference_amplitude)
    half = template_half_width(osc.period, run.series.sample_rate)
    template = build_template(extract_segments(run.series, indices, half), run.series.sample_rate)

    table = CandidateTable(
        indices,
        amplitudes_at(run.series, run.times[run.amplitudes == reference_amplitude]),
        run.series.sample_rate,
        ANALYSIS_RULES["search_window"],
    )
    gof = compute_gof(table, run.series, template, min_amplitude=0.0)
    threshold = gof_threshold(gof)

    residual = table.amplitude - reference_amplitude
    sigma_q = float(np.std(residual, ddof=1))
    linearity = measure_resolution_and_linearity(linearity_run.groups()) if linearity_run else None
    logger.info(f"Detector calibration: sigma_q={sigma_q:.1f} keV/c, gof threshold={threshold:.3f}")
    return DetectorCalibration(template, threshold, sigma_q, gof[np.isfinite(gof)], linearity)


def reconstruct_trace(
    trace: ReadoutTrace,
    osc: OscillatorConfig,
    calibration: DetectorCalibration,
    schedule: Optional[ImpulseTrain] = None,
    edges: Optional[Sequence[float]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Reconstruction:
    """
    Run the full per-trace chain and return the binned spectrum.

    When no schedule is given, calibration pulses in the trace truth are vetoed.
    """
    if schedule is None and trace.truth is not None:
        schedule = trace.truth.select(ImpulseOrigin.CALIBRATION)

    series = filter_trace(trace, osc)
    separation = shadow_separation(osc)
    candidates = scan_events(series, trace.search_window, shadow_separation=separation)

    stats = {
        "noise": apply_noise_cut(candidates, series, exclusion=separation),
        "stability": apply_stability_cut(candidates, trace.monitor_power),
        "calibration_veto": veto_calibration(candidates, schedule),
        "gof": apply_gof_cut(candidates, series, calibration.template, calibration.gof_threshold),
        "degraded_windows": list(series.degraded_windows),
    }
    meta = {"sigma_q_calibration": calibration.sigma_q}
    meta.update(metadata or {})
    spectrum = bin_events(candidates, edges, metadata=meta)
    logger.info(
        f"Reconstructed {len(candidates)} windows: live time {spectrum.live_time:.3f} s "
        f"of {spectrum.raw_time:.3f} s, {spectrum.total} events binned"
    )
    return Reconstruction(series, candidates, spectrum, stats)


def save_calibration(calibration: DetectorCalibration, path: Path) -> Path:
    """Template as .npz plus a JSON sidecar with the gof threshold and resolution."""
    path = Path(path).with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_template(calibration.template, path)
    meta = {"schema_version": SCHEMA_VERSION}
    meta.update(calibration.to_dict())
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return path


def load_calibration(path: Path) -> DetectorCalibration:
    path = Path(path).with_suffix(".npz")
    with open(path.with_suffix(".json"), "r", encoding="utf-8") as f:
        meta = json.load(f)
    check_schema_version(meta.get("schema_version", "0"), "detector calibration")
    return DetectorCalibration(
        template=load_template(path),
        gof_threshold=float(meta["gof_threshold"]),
        sigma_q=float(meta["sigma_q"]),
        calibration_gof=np.empty(0),
    )
