"""Command-line entry point: simulate, reconstruct, fit, report and closure."""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from src import __version__
from src.dynsim import OscillatorConfig, read_trace, write_trace
from src.errors import ConfigurationError, GasCollisionError, SchemaVersionError, StageError
from src.inference import background_only_fit, summarize, write_summary
from src.pipeline.closure import CLOSURE_MODES, run_closure, write_closure
from src.pipeline.config import RunConfig, load_run_config
from src.pipeline.runner import (
    BACKGROUND_REASON,
    TRACE_SUFFIX,
    calibrate_run,
    fit_spectra,
    likelihood_settings,
    plan_datasets,
    run_experiment,
    simulate_dataset,
    simulate_gauge,
    trace_path,
)
from src.provenance import ProvenanceLogger, Stage, StageStatus
from src.recon import load_calibration, read_spectrum, reconstruct_trace, save_calibration, write_events, write_spectrum

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_DIAGNOSTICS = 4

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _calibration_path(config: RunConfig) -> Path:
    return config.output_dir / "calibration" / "detector"


def _banner(title: str):
    print("=" * 60)
    print(title)
    print("=" * 60)


def cmd_simulate(config: RunConfig, args) -> int:
    """Calibrate the detector and write one trace per dataset."""
    provenance = ProvenanceLogger(config.run_id, args.logs_dir)
    root = np.random.SeedSequence(config.seed)
    calibration_seed, gauge_seed, _, *dataset_seeds = root.spawn(3 + len(config.pressures) + 1)

    with provenance.stage(Stage.CALIBRATION, "run", inputs=config.calibration) as record:
        calibration = calibrate_run(config, calibration_seed)
        save_calibration(calibration.detector, _calibration_path(config))
        record["outputs"] = calibration.to_dict()
    print(f"🎯 Detector calibrated: sigma_q = {calibration.detector.sigma_q:.1f} keV/c")

    gauge = simulate_gauge(list(config.pressures), config, np.random.default_rng(gauge_seed))
    for job in plan_datasets(config, calibration, dataset_seeds, gauge, args.include_pileup):
        with provenance.stage(Stage.SIMULATION, job.dataset_id, inputs={"pressure": job.pressure}) as record:
            trace, _, n_collisions = simulate_dataset(job, np.random.default_rng(job.seed))
            path = write_trace(trace, trace_path(config.output_dir, job.dataset_id))
            record["outputs"] = {"n_collisions": n_collisions, "n_samples": trace.n_samples}
        print(f"   📈 {job.dataset_id}: {n_collisions} collisions -> {path}")
    return EXIT_OK


TEMPLATE_AUTO = "auto"


def _trace_inputs(config: RunConfig, source: Optional[Path]) -> List[Path]:
    source = Path(source) if source else config.output_dir / "traces"
    if source.is_file():
        return [source]
    traces = sorted(source.glob(f"*{TRACE_SUFFIX}")) if source.is_dir() else []
    if not traces:
        raise ConfigurationError(f"No traces found under {source}; run simulate first")
    return traces


def _detector_calibration(config: RunConfig, template: Optional[str], provenance: ProvenanceLogger):
    """Saved calibration, or a fresh one from the calibration run when ``template`` is ``auto``."""
    if template == TEMPLATE_AUTO:
        calibration_seed = np.random.SeedSequence(config.seed).spawn(1)[0]
        with provenance.stage(Stage.CALIBRATION, "run", inputs=config.calibration) as record:
            calibration = calibrate_run(config, calibration_seed)
            save_calibration(calibration.detector, _calibration_path(config))
            record["outputs"] = calibration.to_dict()
        print(f"🎯 Detector calibrated: sigma_q = {calibration.detector.sigma_q:.1f} keV/c")
        return calibration.detector
    path = Path(template) if template else _calibration_path(config)
    if not path.with_suffix(".json").exists():
        raise ConfigurationError(f"No detector calibration at {path.with_suffix('.json')}")
    return load_calibration(path)


def cmd_reconstruct(config: RunConfig, args) -> int:
    """Reconstruct traces into events and spectra."""
    traces = _trace_inputs(config, args.input)
    provenance = ProvenanceLogger(config.run_id, args.logs_dir)
    calibration = _detector_calibration(config, args.template, provenance)

    for path in traces:
        trace = read_trace(path)
        metadata = {k: v for k, v in trace.metadata.items() if k not in ("oscillator", "noise", "seed", "spawn_key")}
        dataset_id = str(metadata.get("dataset_id", path.stem))
        osc = OscillatorConfig(**trace.metadata["oscillator"]) if "oscillator" in trace.metadata else OscillatorConfig()
        with provenance.stage(Stage.RECONSTRUCTION, dataset_id, inputs={"trace": path.name}) as record:
            reconstruction = reconstruct_trace(trace, osc, calibration, None, config.bin_edges, metadata)
            write_events(reconstruction.candidates, config.output_dir / "events" / f"{dataset_id}.csv")
            record["outputs"] = reconstruction.spectrum.metadata.get("cuts")
        with provenance.stage(Stage.BINNING, dataset_id) as record:
            csv_path, _ = write_spectrum(reconstruction.spectrum, config.output_dir / "spectra" / dataset_id)
            record["outputs"] = {"counts": reconstruction.spectrum.counts, "live_time": reconstruction.spectrum.live_time}
        spectrum = reconstruction.spectrum
        print(f"   🔍 {dataset_id}: {spectrum.total} events in {spectrum.live_time:.2f} s live -> {csv_path}")
    return EXIT_OK


def cmd_fit(config: RunConfig, args) -> int:
    """Joint fit of the reconstructed spectra; background-only spectra get a sensitivity fit."""
    provenance = ProvenanceLogger(config.run_id, args.logs_dir)
    paths = sorted((config.output_dir / "spectra").glob("*.csv"))
    spectra = [read_spectrum(p) for p in paths]
    fitted = [s for s in spectra if not s.metadata.get("excluded", False)]
    background = [s for s in spectra if s.metadata.get("exclusion_reason") == BACKGROUND_REASON]
    if not fitted:
        raise ConfigurationError(f"No spectra eligible for the fit under {config.output_dir / 'spectra'}")

    settings = likelihood_settings(config)
    sigma_q = float(np.mean([s.metadata["sigma_q_calibration"] for s in fitted]))
    starts = [s.metadata.get("gauge_pressure", s.metadata.get("pressure", 1e-8)) for s in fitted]
    mcmc_seed = np.random.SeedSequence(config.seed).spawn(3)[2]
    started = time.perf_counter()
    try:
        _, posterior = fit_spectra(
            fitted, starts, sigma_q, settings, config.sampler, seed=int(mcmc_seed.generate_state(1)[0]),
        )
    except GasCollisionError as e:
        raise StageError(Stage.FIT.value, str(e)) from e
    summary = summarize(posterior)
    summary_path = write_summary(summary, config.output_dir / "fit" / "fit_summary.json")
    posterior.write_csv(config.output_dir / "fit" / "posterior_samples.csv")
    for spectrum in fitted:
        provenance.log_stage(
            Stage.FIT, spectrum.dataset_id, outputs=summary.to_dict(),
            duration=time.perf_counter() - started, converged=summary.converged,
        )
    for spectrum in spectra:
        if spectrum.metadata.get("excluded", False):
            provenance.log_stage(
                Stage.FIT, spectrum.dataset_id, status=StageStatus.SKIPPED,
                reason=spectrum.metadata.get("exclusion_reason"),
            )

    print(f"📊 alpha = {summary.alpha.median:.3f} [{summary.alpha.lo:.3f}, {summary.alpha.hi:.3f}]")
    if summary.ts_upper_limit is not None:
        print(f"🌡️  T_s < {summary.ts_upper_limit:.0f} K (95%)")
    for estimate in summary.pressures:
        print(f"   {estimate.dataset_id}: P = {estimate.median:.2e} mbar")
    print(f"💾 Summary: {summary_path}")

    for spectrum in background:
        with provenance.stage(Stage.SENSITIVITY, spectrum.dataset_id) as record:
            result = background_only_fit(spectrum, settings=settings)
            record["outputs"] = result.to_dict()
        if result.pressure_floor is not None:
            print(f"🔬 Pressure floor from {spectrum.dataset_id}: {result.pressure_floor:.2e} mbar")

    if not summary.converged:
        print("⚠️  Posterior failed its convergence diagnostics")
        return EXIT_DIAGNOSTICS
    return EXIT_OK


def cmd_report(config: RunConfig, args) -> int:
    """Run every stage end to end and write the report and figure tables."""
    report = run_experiment(config, args.logs_dir, include_pileup=args.include_pileup, keep_traces=args.keep_traces)
    for row in report.pressure_table():
        print(f"   {row['dataset_id']}: P = {row['pressure_med']:.2e} mbar (true {row['true_pressure']:.2e})")
    if report.background is not None and report.background.pressure_floor is not None:
        print(f"🔬 Pressure floor: {report.background.pressure_floor:.2e} mbar")
    print(f"💾 Report: {report.paths.get('report')} (hash {report.report_hash[:12]})")
    if not report.converged:
        print("⚠️  Posterior failed its convergence diagnostics")
        return EXIT_DIAGNOSTICS
    return EXIT_OK


def cmd_closure(config: RunConfig, args) -> int:
    """Repeated trials at the configured truth; writes coverage tables."""
    result = run_closure(config, trials=args.trials, mode=args.mode, workers=args.workers)
    path = write_closure(result, config.output_dir / "closure")
    print(f"📊 alpha coverage: {result.alpha_coverage:.2f} (68% intervals)")
    print(f"🌡️  T_s coverage: {result.ts_coverage:.2f} (95% limits)")
    print(f"💾 Summary: {path}")
    if result.completed and result.convergence_rate < 1.0:
        print(f"⚠️  {1.0 - result.convergence_rate:.0%} of trials failed convergence diagnostics")
        return EXIT_DIAGNOSTICS
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "fit": cmd_fit,
    "report": cmd_report,
    "closure": cmd_closure,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gascoll",
        description="Gas collisions on a levitated nanosphere: simulation, reconstruction and inference.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Run config YAML (default: config/experiment.yml)")
    common.add_argument("--env", default=None, help="Environment inside the config file (default: $GASCOLL_ENV or desk)")
    common.add_argument("--seed", type=int, default=None, help="Override the run seed")
    common.add_argument("--out", type=Path, default=None, help="Override the output directory")
    common.add_argument("--workers", type=int, default=None, help="Parallel processes")
    common.add_argument("--logs-dir", type=Path, default=None, help="Provenance log directory (default: logs/)")
    common.add_argument("--gas", default=None, help="Gas id from data/gases.json")
    common.add_argument(
        "--pressure", dest="pressures", type=float, action="append", default=None,
        help="Injected pressure in mbar; repeat for several datasets",
    )
    common.add_argument("--alpha", type=float, default=None, help="True accommodation coefficient")
    common.add_argument("--ts", dest="surface_temperature", type=float, default=None, help="True surface temperature in K")
    common.add_argument("--duration", type=float, default=None, help="Acquisition per dataset in s")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    sub = parser.add_subparsers(dest="command", required=True)
    simulate = sub.add_parser("simulate", parents=[common], help=COMMANDS["simulate"].__doc__)
    simulate.add_argument("--include-pileup", action="store_true", help="Do not mark high-pressure datasets excluded")
    reconstruct = sub.add_parser("reconstruct", parents=[common], help=COMMANDS["reconstruct"].__doc__)
    reconstruct.add_argument(
        "--in", dest="input", type=Path, default=None, help="Trace file or directory (default: <out>/traces)"
    )
    reconstruct.add_argument(
        "--template", default=None,
        help=f"Detector calibration file, or '{TEMPLATE_AUTO}' to run the calibration (default: <out>/calibration/detector)",
    )
    sub.add_parser("fit", parents=[common], help=COMMANDS["fit"].__doc__)
    report = sub.add_parser("report", parents=[common], help=COMMANDS["report"].__doc__)
    report.add_argument("--include-pileup", action="store_true", help="Fit datasets above the pile-up limit")
    report.add_argument("--keep-traces", action="store_true", help="Also write raw trace files")
    closure = sub.add_parser("closure", parents=[common], help=COMMANDS["closure"].__doc__)
    closure.add_argument("--trials", type=int, default=None, help="Number of trials")
    closure.add_argument("--mode", choices=CLOSURE_MODES, default=None, help="spectrum (fast) or full")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    try:
        overrides = {
            "seed": args.seed,
            "output_dir": str(args.out.resolve()) if args.out else None,
            "workers": args.workers,
            "gas": args.gas,
            "pressures": args.pressures,
            "alpha": args.alpha,
            "surface_temperature": args.surface_temperature,
            "duration": args.duration,
        }
        config = load_run_config(args.config, args.env, overrides)
    except (ConfigurationError, SchemaVersionError) as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    _banner(f"GASCOLL {args.command.upper()}: {config.gas} ({config.run_id})")
    try:
        return COMMANDS[args.command](config, args)
    except (ConfigurationError, SchemaVersionError) as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"❌ Stage {e.stage} failed: {e}", file=sys.stderr)
        for name, artifact in e.artifacts.items():
            print(f"   kept {name}: {artifact}", file=sys.stderr)
        return EXIT_STAGE
    except GasCollisionError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
