"""Repeated-trial closure: how often the fitted intervals cover the injected truth."""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from src.config import ANALYSIS_RULES, SCHEMA_VERSION
from src.errors import ConfigurationError, GasCollisionError
from src.inference import DatasetParams, simulate_spectrum, summarize
from src.pipeline.config import RunConfig
from src.pipeline.runner import (
    calibrate_run,
    fit_spectra,
    likelihood_settings,
    plan_datasets,
    process_dataset,
    simulate_gauge,
)

logger = logging.getLogger(__name__)

CLOSURE_MODES = ("spectrum", "full")

# Flat background level injected in spectrum mode, as a fraction of the per-window ceiling
BACKGROUND_FRACTION = 0.8

TRIAL_FIELDS = [
    "trial", "converged", "alpha_true", "alpha_lo", "alpha_med", "alpha_hi", "alpha_covered",
    "ts_true", "ts_ul_95", "ts_covered", "max_pressure_bias", "error",
]


@dataclass
class TrialResult:
    trial: int
    converged: bool = False
    alpha_true: float = float("nan")
    alpha_lo: float = float("nan")
    alpha_med: float = float("nan")
    alpha_hi: float = float("nan")
    alpha_covered: bool = False
    ts_true: float = float("nan")
    ts_ul_95: Optional[float] = None
    ts_covered: bool = False
    max_pressure_bias: float = float("nan")
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ClosureResult:
    gas: str
    mode: str
    config_hash: str
    trials: List[TrialResult] = field(default_factory=list)

    @property
    def completed(self) -> List[TrialResult]:
        return [t for t in self.trials if t.ok]

    @property
    def alpha_coverage(self) -> float:
        done = self.completed
        return float(np.mean([t.alpha_covered for t in done])) if done else float("nan")

    @property
    def ts_coverage(self) -> float:
        done = [t for t in self.completed if t.ts_ul_95 is not None]
        return float(np.mean([t.ts_covered for t in done])) if done else float("nan")

    @property
    def convergence_rate(self) -> float:
        done = self.completed
        return float(np.mean([t.converged for t in done])) if done else float("nan")

    def to_dict(self) -> Dict[str, Any]:
        done = self.completed
        return {
            "schema_version": SCHEMA_VERSION,
            "gas": self.gas,
            "mode": self.mode,
            "config_hash": self.config_hash,
            "trials": len(self.trials),
            "completed": len(done),
            "failed": len(self.trials) - len(done),
            "alpha_coverage": self.alpha_coverage,
            "ts_coverage": self.ts_coverage,
            "convergence_rate": self.convergence_rate,
            "alpha_med_mean": float(np.mean([t.alpha_med for t in done])) if done else None,
            "alpha_med_std": float(np.std([t.alpha_med for t in done])) if len(done) > 1 else None,
        }


def _fitted_pressures(config: RunConfig) -> List[float]:
    return [p for p in config.pressures if p <= ANALYSIS_RULES["pileup_pressure_limit"]]


def _spectrum_trial(config: RunConfig, seed: np.random.SeedSequence):
    """Counts drawn from the expected spectrum; no trace simulation."""
    rng = np.random.default_rng(seed)
    settings = likelihood_settings(config)
    live_time = config.closure["live_time"]
    bg_amplitude = BACKGROUND_FRACTION / ANALYSIS_RULES["search_window"]
    spectra = []
    pressures = _fitted_pressures(config)
    for i, pressure in enumerate(pressures):
        truth = DatasetParams(pressure, config.sigma_q_target, bg_amplitude, 0.0)
        spectra.append(simulate_spectrum(
            settings, config.alpha, config.surface_temperature, truth, live_time, rng,
            edges=config.bin_edges, metadata={"dataset_id": f"trial_{i}"},
        ))
    gauge = simulate_gauge(pressures, config, rng)
    return spectra, pressures, gauge, config.sigma_q_target, settings, rng


def _full_trial(config: RunConfig, seed: np.random.SeedSequence):
    """Detector calibration, trace simulation and reconstruction for every pressure."""
    calibration_seed, gauge_seed, fit_seed, *dataset_seeds = seed.spawn(3 + len(config.pressures) + 1)
    trial_config = config.with_overrides(background_duration=0.0, pressures=tuple(_fitted_pressures(config)))
    calibration = calibrate_run(trial_config, calibration_seed)
    gauge = simulate_gauge(list(trial_config.pressures), trial_config, np.random.default_rng(gauge_seed))
    jobs = plan_datasets(trial_config, calibration, dataset_seeds, gauge)
    records = [process_dataset(job) for job in jobs]
    spectra = [r.spectrum for r in records]
    settings = likelihood_settings(trial_config)
    return spectra, list(trial_config.pressures), gauge, calibration.detector.sigma_q, settings, np.random.default_rng(fit_seed)


def run_trial(args) -> TrialResult:
    """One closure trial; failures are returned rather than raised so the study continues."""
    config, mode, index, seed = args
    result = TrialResult(trial=index, alpha_true=config.alpha, ts_true=config.surface_temperature)
    try:
        trial = _spectrum_trial if mode == "spectrum" else _full_trial
        spectra, pressures, gauge, sigma_q, settings, rng = trial(config, seed)
        _, posterior = fit_spectra(
            spectra, gauge, sigma_q, settings, config.sampler, seed=int(rng.integers(2 ** 31)),
        )
        summary = summarize(posterior)
    except GasCollisionError as e:
        logger.warning(f"Closure trial {index} failed: {e}")
        result.error = str(e)
        return result

    result.converged = summary.converged
    result.alpha_lo = summary.alpha.lo
    result.alpha_med = summary.alpha.median
    result.alpha_hi = summary.alpha.hi
    result.alpha_covered = bool(summary.alpha.lo <= config.alpha <= summary.alpha.hi)
    result.ts_ul_95 = summary.ts_upper_limit
    result.ts_covered = bool(summary.ts_upper_limit is not None and summary.ts_upper_limit >= config.surface_temperature)
    bias = [abs(p.median / truth - 1.0) for p, truth in zip(summary.pressures, pressures)]
    result.max_pressure_bias = float(max(bias)) if bias else float("nan")
    return result


def write_closure(result: ClosureResult, out_dir: Path) -> Path:
    """Per-trial CSV plus a JSON summary of coverage."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"closure_{result.gas.lower()}_{result.mode}"
    with open(out_dir / f"{stem}.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=TRIAL_FIELDS)
        writer.writeheader()
        for trial in result.trials:
            writer.writerow(asdict(trial))
    path = out_dir / f"{stem}.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(result.to_dict(), f, indent=2, sort_keys=True)
    return path


def run_closure(
    config: RunConfig,
    trials: Optional[int] = None,
    mode: Optional[str] = None,
    workers: Optional[int] = None,
) -> ClosureResult:
    """
    Inject the configured truth repeatedly and refit.

    Args:
        trials: Number of trials; defaults to ``config.closure["trials"]``.
        mode: "spectrum" draws counts from the model expectation (fast); "full"
            simulates and reconstructs traces.
        workers: Parallel processes; defaults to ``config.workers``.

    Raises:
        ConfigurationError: On an unknown mode, a non-positive trial count or no
            pressure below the pile-up limit.
    """
    trials = int(trials if trials is not None else config.closure["trials"])
    mode = mode or config.closure["mode"]
    workers = int(workers if workers is not None else config.workers)
    if mode not in CLOSURE_MODES:
        raise ConfigurationError(f"Closure mode must be one of {CLOSURE_MODES}, got {mode!r}")
    if trials < 1:
        raise ConfigurationError("A closure study needs at least one trial")
    if not _fitted_pressures(config):
        raise ConfigurationError("No configured pressure lies below the pile-up limit")

    seeds = np.random.SeedSequence(config.seed).spawn(trials)
    jobs = [(config, mode, i, s) for i, s in enumerate(seeds)]
    logger.info(f"Closure study: {trials} {mode} trials for {config.gas} with {workers} worker(s)")
    if workers > 1 and trials > 1:
        with Pool(processes=min(workers, trials)) as pool:
            results = pool.map(run_trial, jobs)
    else:
        results = [run_trial(job) for job in jobs]

    closure = ClosureResult(config.gas, mode, config.config_hash, results)
    logger.info(
        f"Closure {config.gas}: alpha coverage {closure.alpha_coverage:.2f}, "
        f"T_s coverage {closure.ts_coverage:.2f} over {len(closure.completed)} trials"
    )
    return closure
