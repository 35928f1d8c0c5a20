"""Nanosphere z-motion simulation: impulse trains, oscillator readout and trace files.

Noise-floor calibration lives in ``src.dynsim.calibration``; it runs the
reconstruction chain and is imported from there directly.
"""

from src.dynsim.impulses import (
    ImpulseOrigin,
    ImpulseTrain,
    merge_trains,
    pulses_at,
    sample_anomalous_impulses,
    sample_impulse_train,
    schedule_calibration_pulses,
)
from src.dynsim.oscillator import (
    NoiseConfig,
    OscillatorConfig,
    ReadoutTrace,
    default_noise_config,
    equipartition_variance,
    green_function,
    impulse_response,
    predicted_resolution,
    simulate_trajectory,
)
from src.dynsim.trace_io import read_trace, read_trace_header, read_truth, trace_seed_sequence, write_trace, write_truth

__all__ = [
    "ImpulseOrigin",
    "ImpulseTrain",
    "NoiseConfig",
    "OscillatorConfig",
    "ReadoutTrace",
    "default_noise_config",
    "equipartition_variance",
    "green_function",
    "impulse_response",
    "merge_trains",
    "predicted_resolution",
    "pulses_at",
    "read_trace",
    "read_trace_header",
    "read_truth",
    "sample_anomalous_impulses",
    "sample_impulse_train",
    "schedule_calibration_pulses",
    "simulate_trajectory",
    "trace_seed_sequence",
    "write_trace",
    "write_truth",
]
