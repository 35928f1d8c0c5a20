"""End-to-end run: calibrate, simulate, reconstruct, fit and report."""

import logging
import time
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import ANALYSIS_RULES, INFERENCE_DEFAULTS, SIMULATION_DEFAULTS
from src.dynsim import (
    ImpulseTrain,
    NoiseConfig,
    OscillatorConfig,
    ReadoutTrace,
    merge_trains,
    sample_anomalous_impulses,
    sample_impulse_train,
    schedule_calibration_pulses,
    simulate_trajectory,
    write_trace,
)
from src.dynsim.calibration import calibrate_noise_floor, simulate_calibration_run
from src.errors import BinningError, GasCollisionError, InsufficientStatisticsError, StageError
from src.inference import (
    DatasetParams,
    LikelihoodSettings,
    ModelParams,
    Posterior,
    background_only_fit,
    compare_to_gauge,
    expected_bin_counts,
    fit_map,
    run_mcmc,
    summarize,
    write_summary,
)
from src.kinetics import SpectrumParams, get_gas
from src.pipeline.config import RunConfig
from src.pipeline.figures import emit_figure_data
from src.pipeline.report import DatasetRecord, RunReport, StageRecord, spectrum_hash, write_report
from src.provenance import ProvenanceAuditor, ProvenanceLogger, Stage, StageStatus
from src.recon import (
    BinnedSpectrum,
    DetectorCalibration,
    calibrate_detector,
    reconstruct_trace,
    save_calibration,
    write_events,
    write_spectrum,
)

logger = logging.getLogger(__name__)

BACKGROUND_ID = "background"
PILEUP_REASON = "pile-up: pressure above {limit:.0e} mbar distorts the single-collision spectrum"
BACKGROUND_REASON = "background-only dataset"
TRACE_SUFFIX = ".nstrace"


@dataclass(frozen=True)
class DatasetJob:
    """Everything a worker needs to simulate and reconstruct one dataset."""

    dataset_id: str
    pressure: float
    gauge_pressure: Optional[float]
    duration: float
    seed: np.random.SeedSequence
    config: RunConfig
    osc: OscillatorConfig
    noise: NoiseConfig
    calibration: DetectorCalibration
    excluded: bool = False
    exclusion_reason: Optional[str] = None
    background: bool = False
    keep_traces: bool = False


@dataclass
class RunCalibration:
    osc: OscillatorConfig
    noise: NoiseConfig
    detector: DetectorCalibration
    history: List[Dict[str, float]]

    def to_dict(self) -> Dict[str, Any]:
        data = self.detector.to_dict()
        data["readout_noise_density"] = self.noise.readout_noise_density
        data["noise_iterations"] = self.history
        return data


def likelihood_settings(config: RunConfig) -> LikelihoodSettings:
    return LikelihoodSettings(
        gas=get_gas(config.gas),
        threshold=config.threshold,
        total_constraint=config.likelihood["total_constraint"],
        fit_bg_mean=config.likelihood["fit_bg_mean"],
        kernel_method=config.likelihood["kernel_method"],
    )


def calibrate_run(config: RunConfig, seed: np.random.SeedSequence) -> RunCalibration:
    """Tune the readout noise, then build template, gof threshold and sigma_q from calibration pulses."""
    rng = np.random.default_rng(seed)
    osc = OscillatorConfig()
    cal = config.calibration
    noise, history = calibrate_noise_floor(
        osc, config.sigma_q_target, rng=rng, pulses=cal["pulses"], amplitude=cal["amplitude"], return_history=True,
    )
    run = simulate_calibration_run(osc, noise, [cal["amplitude"]], cal["pulses"], rng)
    linearity_run = None
    if cal["linearity_pulses"] > 0:
        linearity_run = simulate_calibration_run(
            osc, noise, SIMULATION_DEFAULTS["linearity_amplitudes"], cal["linearity_pulses"], rng,
        )
    detector = calibrate_detector(run, osc, cal["amplitude"], linearity_run)
    return RunCalibration(osc, noise, detector, history)


def simulate_gauge(pressures: List[float], config: RunConfig, rng: np.random.Generator) -> List[float]:
    """Cold-cathode-style readings: true pressure with relative scatter plus a base-pressure offset."""
    gauge = config.gauge
    scatter = gauge["relative_scatter"] * rng.standard_normal(len(pressures))
    return [float(p * (1.0 + s) + gauge["base_pressure"]) for p, s in zip(pressures, scatter)]


def plan_datasets(
    config: RunConfig,
    calibration: RunCalibration,
    seeds: List[np.random.SeedSequence],
    gauge: List[float],
    include_pileup: bool = False,
    keep_traces: bool = False,
) -> List[DatasetJob]:
    limit = ANALYSIS_RULES["pileup_pressure_limit"]
    jobs = []
    for i, pressure in enumerate(config.pressures):
        pileup = pressure > limit and not include_pileup
        jobs.append(DatasetJob(
            dataset_id=f"{config.gas.lower()}_{i}",
            pressure=pressure,
            gauge_pressure=gauge[i],
            duration=config.duration,
            seed=seeds[i],
            config=config,
            osc=calibration.osc,
            noise=calibration.noise,
            calibration=calibration.detector,
            excluded=pileup,
            exclusion_reason=PILEUP_REASON.format(limit=limit) if pileup else None,
            keep_traces=keep_traces,
        ))
    if config.background_duration > 0:
        jobs.append(DatasetJob(
            dataset_id=BACKGROUND_ID,
            pressure=0.0,
            gauge_pressure=None,
            duration=config.background_duration,
            seed=seeds[len(config.pressures)],
            config=config,
            osc=calibration.osc,
            noise=calibration.noise,
            calibration=calibration.detector,
            background=True,
            keep_traces=keep_traces,
        ))
    return jobs


def impulse_train_for(job: DatasetJob, rng: np.random.Generator) -> Tuple[ImpulseTrain, ImpulseTrain, int]:
    """Collisions, scheduled calibration pulses and anomalous kicks for one dataset."""
    config = job.config
    collisions = ImpulseTrain.empty()
    if job.pressure > 0:
        params = SpectrumParams(
            gas=get_gas(config.gas),
            pressure=job.pressure,
            alpha=config.alpha,
            surface_temperature=config.surface_temperature,
            sigma_q=config.sigma_q_target,
        )
        collisions = sample_impulse_train(params, job.duration, rng)
    schedule = schedule_calibration_pulses(job.duration, config.calibration["period"], config.calibration["amplitude"])
    anomalous = ImpulseTrain.empty()
    if config.anomalous["rate"] > 0:
        anomalous = sample_anomalous_impulses(
            config.anomalous["rate"], config.anomalous["mean_amplitude"], job.duration, rng
        )
    return merge_trains(collisions, schedule, anomalous), schedule, len(collisions)


def dataset_metadata(job: DatasetJob) -> Dict[str, Any]:
    """Spectrum metadata of a dataset; also stored in its trace header."""
    metadata = {
        "dataset_id": job.dataset_id,
        "gas": job.config.gas,
        "pressure": job.pressure,
        "excluded": job.excluded or job.background,
        "exclusion_reason": BACKGROUND_REASON if job.background else job.exclusion_reason,
    }
    if job.gauge_pressure is not None:
        metadata["gauge_pressure"] = job.gauge_pressure
    return metadata


def simulate_dataset(job: DatasetJob, rng: np.random.Generator) -> Tuple[ReadoutTrace, ImpulseTrain, int]:
    """Readout trace of one dataset, its calibration schedule and the number of gas collisions."""
    train, schedule, n_collisions = impulse_train_for(job, rng)
    metadata = dataset_metadata(job)
    metadata.update(seed=int(job.seed.entropy), spawn_key=[int(k) for k in job.seed.spawn_key])
    trace = simulate_trajectory(job.osc, job.noise, train, job.duration, rng, metadata=metadata)
    return trace, schedule, n_collisions


def trace_path(output_dir: Path, dataset_id: str) -> Path:
    return Path(output_dir) / "traces" / f"{dataset_id}{TRACE_SUFFIX}"


def process_dataset(job: DatasetJob) -> DatasetRecord:
    """Simulate one trace, reconstruct it and write events and spectrum files."""
    config = job.config
    rng = np.random.default_rng(job.seed)
    timings: Dict[str, float] = {}
    paths: Dict[str, str] = {}

    start = time.perf_counter()
    trace, schedule, n_collisions = simulate_dataset(job, rng)
    if job.keep_traces:
        paths["trace"] = str(write_trace(trace, trace_path(config.output_dir, job.dataset_id)))
    timings["simulation"] = time.perf_counter() - start

    start = time.perf_counter()
    reconstruction = reconstruct_trace(
        trace, job.osc, job.calibration, schedule, config.bin_edges, dataset_metadata(job)
    )
    timings["reconstruction"] = time.perf_counter() - start

    start = time.perf_counter()
    paths["events"] = str(write_events(reconstruction.candidates, config.output_dir / "events" / f"{job.dataset_id}.csv"))
    csv_path, _ = write_spectrum(reconstruction.spectrum, config.output_dir / "spectra" / job.dataset_id)
    paths["spectrum"] = str(csv_path)
    timings["binning"] = time.perf_counter() - start

    return DatasetRecord(
        dataset_id=job.dataset_id,
        pressure=job.pressure,
        gauge_pressure=job.gauge_pressure,
        spectrum=reconstruction.spectrum,
        n_collisions=n_collisions,
        cut_stats={k: v for k, v in reconstruction.cut_stats.items() if k != "degraded_windows"},
        excluded=job.excluded,
        exclusion_reason=job.exclusion_reason,
        background=job.background,
        paths=paths,
        timings=timings,
    )


def process_datasets(jobs: List[DatasetJob], workers: int = 1) -> List[DatasetRecord]:
    """Datasets in parallel when ``workers`` > 1; results keep the job order."""
    if workers > 1 and len(jobs) > 1:
        with Pool(processes=min(workers, len(jobs))) as pool:
            return pool.map(process_dataset, jobs)
    return [process_dataset(job) for job in jobs]


def initial_params(start_pressures: Sequence[float], sigma_q: float) -> ModelParams:
    """MAP starting point: mid-range accommodation, slightly warm surface, pressures from the gauge."""
    search_window = ANALYSIS_RULES["search_window"]
    return ModelParams(
        alpha=0.5,
        surface_temperature=ANALYSIS_RULES["ts_lower_bound"] + 20.0,
        datasets=[
            DatasetParams(
                pressure=float(np.clip(p, 1e-12, INFERENCE_DEFAULTS["pressure_max"])),
                sigma_q=sigma_q,
                bg_amplitude=0.5 / search_window,
                bg_mean=0.0,
            )
            for p in start_pressures
        ],
    )


def fit_spectra(
    spectra: Sequence[BinnedSpectrum],
    start_pressures: Sequence[float],
    sigma_q: float,
    settings: LikelihoodSettings,
    sampler: Dict[str, Any],
    seed: int,
) -> Tuple[ModelParams, Posterior]:
    """MAP fit followed by MCMC started around the MAP point."""
    best = fit_map(spectra, initial_params(start_pressures, sigma_q), settings)
    posterior = run_mcmc(
        spectra, best,
        n_steps=sampler["steps"],
        n_chains=sampler["chains"],
        seed=seed,
        settings=settings,
        burn_fraction=sampler["burn_fraction"],
    )
    return best, posterior


def single_collision_residuals(
    spectrum: BinnedSpectrum,
    pressure: float,
    noise: BinnedSpectrum,
    alpha: float,
    surface_temperature: float,
    sigma_q: float,
    settings: LikelihoodSettings,
    min_expected: float = ANALYSIS_RULES["pileup_min_expected"],
) -> np.ndarray:
    """
    Per-bin deviation, in standard deviations, of a spectrum from the single-collision model.

    The model is the smeared kinetic spectrum at ``pressure`` plus the noise-only
    spectrum ``noise`` scaled to the same live time. The variance adds the counting
    scatter of the model and that of the scaled noise counts. Bins expecting fewer
    than ``min_expected`` counts are NaN.

    Raises:
        BinningError: If the two spectra are binned differently.
        InsufficientStatisticsError: If either spectrum has no live time.
    """
    if not np.array_equal(spectrum.bin_edges, noise.bin_edges):
        raise BinningError(f"{spectrum.dataset_id} and {noise.dataset_id} have different bin edges")
    if spectrum.live_time <= 0 or noise.live_time <= 0:
        raise InsufficientStatisticsError("Single-collision comparison needs live time in both spectra")

    scale = spectrum.live_time / noise.live_time
    signal = expected_bin_counts(spectrum, alpha, surface_temperature, DatasetParams(pressure, sigma_q, 0.0), settings)
    expected = signal + scale * noise.counts
    variance = expected * (1.0 + settings.overdispersion) + scale**2 * noise.counts
    residuals = np.full(expected.size, np.nan)
    tested = expected >= min_expected
    residuals[tested] = (spectrum.counts[tested] - expected[tested]) / np.sqrt(variance[tested])
    return residuals


def max_deviation(residuals: np.ndarray) -> float:
    tested = np.abs(residuals[np.isfinite(residuals)])
    return float(tested.max()) if tested.size else 0.0


class ExperimentRunner:
    """Runs the stages of one configuration and records their provenance."""

    def __init__(
        self,
        config: RunConfig,
        logs_dir: Optional[Path] = None,
        include_pileup: bool = False,
        keep_traces: bool = False,
    ):
        self.config = config
        self.include_pileup = include_pileup
        self.keep_traces = keep_traces
        self.provenance = ProvenanceLogger(config.run_id, logs_dir)
        self.auditor = ProvenanceAuditor(self.provenance.logs_dir)
        self.stages: List[StageRecord] = []
        self.artifacts: Dict[str, Any] = {}

        root = np.random.SeedSequence(config.seed)
        n_datasets = len(config.pressures) + 1
        self.calibration_seed, self.gauge_seed, self.mcmc_seed, *self.dataset_seeds = root.spawn(
            3 + n_datasets
        )

    def _record(self, stage: Stage, dataset_id: str, status: StageStatus, outputs=None, duration=None, inputs=None, **details):
        output_hash = self.provenance.log_stage(stage, dataset_id, inputs, outputs, status, duration, **details)
        self.stages.append(StageRecord(Stage(stage).value, dataset_id, StageStatus(status).value, output_hash, duration))

    def _fail(self, stage: Stage, dataset_id: str, error: Exception, started: float):
        self._record(stage, dataset_id, StageStatus.ERROR, duration=time.perf_counter() - started, error=str(error))
        raise StageError(Stage(stage).value, str(error), dict(self.artifacts)) from error

    def calibrate(self) -> RunCalibration:
        started = time.perf_counter()
        try:
            calibration = calibrate_run(self.config, self.calibration_seed)
        except GasCollisionError as e:
            self._fail(Stage.CALIBRATION, "run", e, started)
        path = save_calibration(calibration.detector, self.config.output_dir / "calibration" / "detector")
        self.artifacts["calibration"] = str(path)
        self._record(
            Stage.CALIBRATION, "run", StageStatus.SUCCESS, calibration.to_dict(), time.perf_counter() - started,
            inputs={"sigma_q_target": self.config.sigma_q_target, "calibration": self.config.calibration},
        )
        return calibration

    def simulate(self, calibration: RunCalibration) -> List[DatasetRecord]:
        gauge = simulate_gauge(list(self.config.pressures), self.config, np.random.default_rng(self.gauge_seed))
        jobs = plan_datasets(
            self.config, calibration, self.dataset_seeds, gauge, self.include_pileup, self.keep_traces
        )
        started = time.perf_counter()
        try:
            records = process_datasets(jobs, self.config.workers)
        except GasCollisionError as e:
            self._fail(Stage.SIMULATION, "run", e, started)

        for record in records:
            self.artifacts.setdefault("spectra", {})[record.dataset_id] = record.paths.get("spectrum")
            inputs = {"pressure": record.pressure, "config_hash": self.config.config_hash}
            self._record(Stage.SIMULATION, record.dataset_id, StageStatus.SUCCESS,
                         {"n_collisions": record.n_collisions}, record.timings["simulation"], inputs)
            self._record(Stage.RECONSTRUCTION, record.dataset_id, StageStatus.SUCCESS,
                         record.spectrum.metadata.get("cuts"), record.timings["reconstruction"])
            self._record(Stage.BINNING, record.dataset_id, StageStatus.SUCCESS,
                         spectrum_hash(record.spectrum), record.timings["binning"])
            if record.excluded:
                logger.warning(f"Dataset {record.dataset_id} excluded from the fit ({record.exclusion_reason})")
        return records

    def pileup_check(self, record: DatasetRecord, records: List[DatasetRecord], calibration: RunCalibration,
                     settings: LikelihoodSettings) -> Dict[str, float]:
        """Largest per-bin deviation of an excluded dataset from the single-collision model."""
        noise = next((r for r in records if r.background), None)
        if noise is None:
            return {}
        try:
            residuals = single_collision_residuals(
                record.spectrum, record.gauge_pressure or record.pressure, noise.spectrum,
                self.config.alpha, self.config.surface_temperature, calibration.detector.sigma_q, settings,
            )
        except GasCollisionError as e:
            logger.info(f"Skipping single-collision check of {record.dataset_id}: {e}")
            return {}
        deviation = max_deviation(residuals)
        if deviation > ANALYSIS_RULES["pileup_deviation_sigma"]:
            logger.info(f"{record.dataset_id}: spectrum deviates from the single-collision model by {deviation:.1f} sigma")
        return {"max_deviation": deviation}

    def fit(self, records: List[DatasetRecord], calibration: RunCalibration, settings: LikelihoodSettings):
        fitted = [r for r in records if r.fitted]
        for r in records:
            if r.background:
                self._record(Stage.FIT, r.dataset_id, StageStatus.SKIPPED, reason=BACKGROUND_REASON)
            elif not r.fitted:
                self._record(Stage.FIT, r.dataset_id, StageStatus.SKIPPED, reason=r.exclusion_reason,
                             **self.pileup_check(r, records, calibration, settings))
        if not fitted:
            logger.warning("No dataset eligible for the joint fit")
            return None, {}, None, None

        spectra = [r.spectrum for r in fitted]
        started = time.perf_counter()
        try:
            best, posterior = fit_spectra(
                spectra,
                [r.gauge_pressure or r.pressure for r in fitted],
                calibration.detector.sigma_q,
                settings,
                self.config.sampler,
                seed=int(self.mcmc_seed.generate_state(1)[0]),
            )
        except GasCollisionError as e:
            for r in fitted:
                self._record(Stage.FIT, r.dataset_id, StageStatus.ERROR, error=str(e))
            raise StageError(Stage.FIT.value, str(e), dict(self.artifacts)) from e
        duration = time.perf_counter() - started

        output = self.config.output_dir
        summary = summarize(posterior)
        self.artifacts["samples"] = str(posterior.write_csv(output / "fit" / "posterior_samples.csv"))
        self.artifacts["summary"] = str(write_summary(summary, output / "fit" / "fit_summary.json"))
        model = {
            r.dataset_id: expected_bin_counts(r.spectrum, best.alpha, best.surface_temperature, d, settings)
            for r, d in zip(fitted, best.datasets)
        }

        gauge = None
        try:
            gauge = compare_to_gauge(summary.pressures, [r.gauge_pressure for r in fitted])
        except InsufficientStatisticsError as e:
            logger.info(f"Skipping gauge comparison: {e}")

        for r in fitted:
            self._record(Stage.FIT, r.dataset_id, StageStatus.SUCCESS, summary.to_dict(), duration,
                         converged=summary.converged)
        if not summary.converged:
            logger.warning("Joint posterior failed its convergence diagnostics")
        return best, model, summary, gauge

    def sensitivity(self, records: List[DatasetRecord], settings: LikelihoodSettings):
        background = [r for r in records if r.background]
        if not background:
            return None
        record = background[0]
        started = time.perf_counter()
        try:
            result = background_only_fit(record.spectrum, settings=settings)
        except GasCollisionError as e:
            self._fail(Stage.SENSITIVITY, record.dataset_id, e, started)
        self._record(Stage.SENSITIVITY, record.dataset_id, StageStatus.SUCCESS, result.to_dict(),
                     time.perf_counter() - started)
        return result

    def run(self) -> RunReport:
        config = self.config
        logger.info(f"Run {config.run_id}: {config.gas} at {len(config.pressures)} pressures")
        calibration = self.calibrate()
        records = self.simulate(calibration)
        settings = likelihood_settings(config)
        best, model, summary, gauge = self.fit(records, calibration, settings)
        background = self.sensitivity(records, settings)

        report = RunReport(
            run_id=config.run_id,
            config=config.to_dict(),
            config_hash=config.config_hash,
            calibration=calibration.to_dict(),
            datasets=records,
            overdispersion=settings.overdispersion,
            map_params=best,
            model_counts=model,
            summary=summary,
            gauge=gauge,
            background=background,
            stages=self.stages,
        )
        started = time.perf_counter()
        figures = emit_figure_data(report, config.output_dir / "figures")
        report.paths = {**{k: v for k, v in self.artifacts.items() if isinstance(v, str)},
                        "figures": [str(p) for p in figures]}
        self._record(Stage.REPORT, "run", StageStatus.SUCCESS, {"report_hash": report.report_hash},
                     time.perf_counter() - started)
        report.stages = list(self.stages)
        report.audit = self.auditor.audit_run(config.run_id)
        report.paths["report"] = str(write_report(report, config.output_dir / "report.json"))
        logger.info(f"Run {config.run_id} finished: report hash {report.report_hash[:12]}")
        return report


def run_experiment(
    config: RunConfig,
    logs_dir: Optional[Path] = None,
    include_pileup: bool = False,
    keep_traces: bool = False,
) -> RunReport:
    """
    Execute calibration, simulation, reconstruction, joint fit, sensitivity and reporting.

    Args:
        include_pileup: Fit datasets above the pile-up pressure limit instead of excluding them.
        keep_traces: Also write the raw trace files (large at full scale).

    Raises:
        StageError: Tagged with the failing stage; files written so far stay in place and
            are listed in ``artifacts``.
    """
    return ExperimentRunner(config, logs_dir, include_pileup, keep_traces).run()
