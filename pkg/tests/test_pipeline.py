"""Tests for run configuration, reports, figure tables, closure studies and the CLI."""

import csv
import json
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import yaml

from src.dynsim import (
    ImpulseTrain,
    NoiseConfig,
    OscillatorConfig,
    default_noise_config,
    read_trace_header,
    simulate_trajectory,
    write_trace,
)
from src.errors import BinningError, ConfigurationError, InsufficientStatisticsError, StageError
from src.inference import DatasetParams, ModelParams, expected_bin_counts, parameter_bounds
from src.inference.summary import Interval, PosteriorSummary, PressureEstimate
from src.pipeline import cli
from src.pipeline.closure import ClosureResult, TrialResult, run_closure, write_closure
from src.pipeline.config import build_run_config, expand_variables, load_run_config
from src.pipeline.figures import RATE_FIELDS, emit_figure_data, normalized_residuals
from src.pipeline.report import DatasetRecord, RunReport, StageRecord, write_report
from src.pipeline.runner import (
    BACKGROUND_ID,
    RunCalibration,
    initial_params,
    likelihood_settings,
    max_deviation,
    plan_datasets,
    run_experiment,
    simulate_gauge,
    single_collision_residuals,
)
from src.provenance import ProvenanceAuditor, ProvenanceLogger, Stage
from src.recon import BinnedSpectrum

EDGES = np.array([150.0, 175.0, 200.0, 225.0])


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("GASCOLL_ENV", "GASCOLL_SEED", "GASCOLL_OUTPUT_DIR", "GASCOLL_WORKERS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def test_config(tmp_path):
    return load_run_config(env="test", overrides={"output_dir": str(tmp_path / "out")})


def raw_environment(**changes):
    data = {
        "gas": "Kr",
        "pressures": [1e-8, 5e-8],
        "alpha": 0.5,
        "surface_temperature": 293.0,
        "sigma_q_target": 60.0,
        "duration": 1.0,
        "seed": 3,
        "output_dir": "output/unit",
    }
    data.update(changes)
    return data


def record_for(dataset_id, counts, live_time=2.0, **kwargs):
    spectrum = BinnedSpectrum(
        EDGES, counts, live_time, raw_time=max(live_time, 3.0), metadata={"dataset_id": dataset_id, "gas": "Xe"}
    )
    return DatasetRecord(dataset_id=dataset_id, pressure=kwargs.pop("pressure", 1e-8), gauge_pressure=1.1e-8,
                         spectrum=spectrum, n_collisions=20, **kwargs)


def synthetic_report(output_dir="/tmp/a", duration=0.1, datasets=None, model=None, summary=None):
    datasets = datasets if datasets is not None else [record_for("xe_0", [10, 5, 0])]
    return RunReport(
        run_id="xe_test_7_abcdef12",
        config={"gas": "Xe", "pressures": [1e-8], "seed": 7, "output_dir": output_dir},
        config_hash="a" * 64,
        calibration={"sigma_q": 60.0},
        datasets=datasets,
        overdispersion=0.05,
        model_counts=model if model is not None else {"xe_0": np.array([8.0, 6.0, 1.0])},
        summary=summary,
        stages=[StageRecord("simulation", "xe_0", "success", "f" * 64, duration)],
    )


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class TestRunConfig:
    def test_load_test_environment(self, test_config, tmp_path):
        assert test_config.gas == "Xe"
        assert test_config.pressures == (3e-8, 2e-7)
        assert test_config.seed == 7
        assert test_config.env == "test"
        assert test_config.output_dir == tmp_path / "out"
        assert test_config.output_dir.is_dir()
        assert test_config.bin_edges[0] == 150.0
        assert test_config.bin_edges[-1] == 1000.0

    def test_seed_from_environment_keeps_integer_type(self, monkeypatch, tmp_path):
        monkeypatch.setenv("GASCOLL_SEED", "99")
        config = load_run_config(env="test", overrides={"output_dir": str(tmp_path)})
        assert config.seed == 99
        assert isinstance(config.seed, int)

    def test_environment_selected_from_variable(self, monkeypatch, tmp_path):
        monkeypatch.setenv("GASCOLL_ENV", "test")
        assert load_run_config(overrides={"output_dir": str(tmp_path)}).env == "test"

    def test_expand_variables(self, monkeypatch):
        monkeypatch.setenv("GASCOLL_X", "4")
        assert expand_variables("${GASCOLL_X}") == 4
        assert expand_variables("${GASCOLL_Y:-2.5}") == 2.5
        assert expand_variables("run-${GASCOLL_Y:-a}") == "run-a"
        assert expand_variables({"a": ["${GASCOLL_X}"]}) == {"a": [4]}

    def test_unset_variable_without_default(self):
        with pytest.raises(ConfigurationError, match="GASCOLL_UNSET"):
            expand_variables("${GASCOLL_UNSET}")

    def test_defaults_fill_missing_sections(self, tmp_path):
        config = build_run_config(raw_environment(output_dir=str(tmp_path)))
        assert config.sampler["chains"] >= 4
        assert config.calibration["amplitude"] == 1040.0
        assert config.likelihood["total_constraint"] == "extended"

    def test_nested_override_merges(self, tmp_path):
        config = load_run_config(env="test", overrides={"output_dir": str(tmp_path), "sampler": {"steps": 10}})
        assert config.sampler["steps"] == 10
        assert config.sampler["chains"] == 16

    @pytest.mark.parametrize("changes", [
        {"gas": "Ne"},
        {"pressures": [-1e-8]},
        {"seed": "abc"},
        {"sampler": {"chains": 2}},
        {"binning": {"start": 100.0, "stop": 1000.0, "step": 25.0}},
        {"likelihood": {"total_constraint": "poisson"}},
        {"colour": "blue"},
    ])
    def test_invalid_values(self, changes, tmp_path):
        with pytest.raises(ConfigurationError):
            build_run_config(raw_environment(output_dir=str(tmp_path), **changes))

    def test_unknown_environment(self, tmp_path):
        with pytest.raises(ConfigurationError, match="staging"):
            load_run_config(env="staging", overrides={"output_dir": str(tmp_path)})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "absent.yml")

    def test_single_environment_file(self, tmp_path):
        path = tmp_path / "kr.yml"
        path.write_text(yaml.safe_dump(raw_environment(output_dir=str(tmp_path / "kr"))))
        config = load_run_config(path, env="custom")
        assert config.gas == "Kr"
        assert config.env == "custom"

    def test_hash_ignores_location_and_workers(self, tmp_path):
        a = build_run_config(raw_environment(output_dir=str(tmp_path / "a")))
        b = build_run_config(raw_environment(output_dir=str(tmp_path / "b"), workers=4))
        c = build_run_config(raw_environment(output_dir=str(tmp_path / "a"), seed=4))
        assert a.config_hash == b.config_hash
        assert a.config_hash != c.config_hash
        assert a.run_id == f"kr_desk_3_{a.config_hash[:8]}"


class TestRunPlanning:
    @pytest.fixture
    def calibration(self):
        return RunCalibration(OscillatorConfig(), default_noise_config(), detector=None, history=[])

    def seeds(self, n):
        return np.random.SeedSequence(1).spawn(n)

    def test_pileup_dataset_excluded(self, test_config, calibration):
        jobs = plan_datasets(test_config, calibration, self.seeds(3), [3e-8, 2e-7])
        by_id = {job.dataset_id: job for job in jobs}
        assert not by_id["xe_0"].excluded
        assert by_id["xe_1"].excluded
        assert "pile-up" in by_id["xe_1"].exclusion_reason

    def test_pileup_can_be_forced_into_fit(self, test_config, calibration):
        jobs = plan_datasets(test_config, calibration, self.seeds(3), [3e-8, 2e-7], include_pileup=True)
        assert not any(job.excluded for job in jobs)

    def test_background_dataset_appended(self, test_config, calibration):
        jobs = plan_datasets(test_config, calibration, self.seeds(3), [3e-8, 2e-7])
        background = jobs[-1]
        assert background.dataset_id == BACKGROUND_ID
        assert background.background
        assert background.pressure == 0.0
        assert background.duration == test_config.background_duration

    def test_no_background_when_disabled(self, test_config, calibration):
        config = test_config.with_overrides(background_duration=0.0)
        jobs = plan_datasets(config, calibration, self.seeds(3), [3e-8, 2e-7])
        assert [job.dataset_id for job in jobs] == ["xe_0", "xe_1"]

    def test_gauge_without_scatter_reads_truth(self, test_config):
        readings = simulate_gauge([1e-8, 3e-8], test_config, np.random.default_rng(0))
        assert readings == pytest.approx([1e-8, 3e-8])

    def test_gauge_offset_and_scatter(self, test_config):
        config = test_config.with_overrides(gauge={"relative_scatter": 0.1, "base_pressure": 1e-9})
        readings = np.array(simulate_gauge([1e-8] * 4000, config, np.random.default_rng(0)))
        assert readings.mean() == pytest.approx(1.1e-8, rel=0.01)
        assert readings.std() == pytest.approx(1e-9, rel=0.05)

    def test_initial_point_inside_bounds(self, test_config):
        init = initial_params([3e-8, 0.0, 1.0], sigma_q=61.0)
        lower, upper = parameter_bounds(3, likelihood_settings(test_config))
        vector = init.to_vector()
        assert np.all(vector >= lower)
        assert np.all(vector <= upper)


class TestSingleCollisionCheck:
    @pytest.fixture
    def model(self, test_config):
        settings = likelihood_settings(test_config)
        edges = np.asarray(test_config.bin_edges, dtype=float)
        noise_counts = np.zeros(edges.size - 1)
        noise_counts[:2] = [40, 10]
        noise = BinnedSpectrum(edges, noise_counts, 2.0, metadata={"dataset_id": BACKGROUND_ID})
        empty = BinnedSpectrum(edges, np.zeros(edges.size - 1), 1.0)
        signal = expected_bin_counts(empty, 0.6, 293.0, DatasetParams(5e-8, 60.0, 0.0), settings)
        return settings, noise, signal + 0.5 * noise.counts

    def residuals(self, model, counts):
        settings, noise, _ = model
        spectrum = BinnedSpectrum(noise.bin_edges, counts, 1.0, metadata={"dataset_id": "xe_0"})
        return single_collision_residuals(spectrum, 5e-8, noise, 0.6, 293.0, 60.0, settings)

    def test_model_spectrum_is_consistent(self, model):
        expected = model[2]
        residuals = self.residuals(model, np.rint(expected))
        tested = expected >= 5.0
        assert tested[0]
        assert np.all(np.isnan(residuals[~tested]))
        assert np.all(np.abs(residuals[tested]) < 0.25)
        assert max_deviation(residuals) < 3.0

    def test_doubled_spectrum_deviates(self, model):
        residuals = self.residuals(model, 2 * np.rint(model[2]))
        assert max_deviation(residuals) > 3.0

    def test_binning_must_match(self, model):
        settings, noise, _ = model
        spectrum = BinnedSpectrum(noise.bin_edges[:5], [1, 2, 3, 4], 1.0)
        with pytest.raises(BinningError):
            single_collision_residuals(spectrum, 5e-8, noise, 0.6, 293.0, 60.0, settings)

    def test_noise_spectrum_needs_live_time(self, model):
        settings, noise, _ = model
        silent = BinnedSpectrum(noise.bin_edges, noise.counts, 0.0)
        with pytest.raises(InsufficientStatisticsError):
            single_collision_residuals(silent, 5e-8, noise, 0.6, 293.0, 60.0, settings)

    def test_no_tested_bins(self):
        assert max_deviation(np.full(3, np.nan)) == 0.0


class TestFigureData:
    def test_residuals_definition(self):
        residual = normalized_residuals([10, 5, 0], [8.0, 6.0, 1.0], 0.05)
        expected = (np.array([10, 5, 0]) - np.array([8.0, 6.0, 1.0])) / np.sqrt(np.array([8.0, 6.0, 1.0]) * 1.05)
        assert residual == pytest.approx(expected)

    def test_residual_undefined_without_expectation(self):
        assert np.isnan(normalized_residuals([3], [0.0], 0.05)[0])

    def test_rate_table(self, tmp_path):
        emit_figure_data(synthetic_report(), tmp_path)
        rows = read_rows(tmp_path / "rates_xe_0.csv")
        assert list(rows[0].keys()) == RATE_FIELDS
        assert len(rows) == 3
        assert float(rows[0]["rate"]) == pytest.approx(10 / (2.0 * 25.0))
        assert float(rows[0]["residual"]) == pytest.approx(2.0 / np.sqrt(8.0 * 1.05))

    def test_model_integrates_back_to_expected_counts(self, tmp_path):
        model = np.array([8.25, 6.5, 1.125])
        emit_figure_data(synthetic_report(model={"xe_0": model}), tmp_path)
        rows = read_rows(tmp_path / "rates_xe_0.csv")
        integrated = sum(float(r["model_rate"]) * (float(r["hi_edge"]) - float(r["lo_edge"])) * 2.0 for r in rows)
        assert integrated == pytest.approx(model.sum(), rel=1e-3)

    def test_empty_dataset_gives_header_only_table(self, tmp_path):
        empty = record_for("xe_9", [0, 0, 0], live_time=0.0)
        emit_figure_data(synthetic_report(datasets=[empty], model={}), tmp_path)
        with open(tmp_path / "rates_xe_9.csv", encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert lines == [",".join(RATE_FIELDS)]

    def test_unfitted_dataset_has_blank_model(self, tmp_path):
        excluded = record_for("xe_1", [4, 4, 4], excluded=True, exclusion_reason="pile-up")
        emit_figure_data(synthetic_report(datasets=[excluded], model={}), tmp_path)
        rows = read_rows(tmp_path / "rates_xe_1.csv")
        assert all(r["model_counts"] == "" and r["residual"] == "" for r in rows)
        assert float(rows[0]["counts"]) == 4

    def test_pressure_comparison_and_index(self, tmp_path):
        summary = PosteriorSummary(
            gas="Xe",
            alpha=Interval(0.5, 0.6, 0.7),
            ts_upper_limit=340.0,
            pressures=[PressureEstimate("xe_0", 1.05e-8, 0.95e-8, 1.15e-8)],
            sigma_q=[Interval(58.0, 60.0, 62.0)],
        )
        emit_figure_data(synthetic_report(summary=summary), tmp_path)
        rows = read_rows(tmp_path / "pressure_comparison_xe.csv")
        assert len(rows) == 1
        assert float(rows[0]["pressure_med"]) == pytest.approx(1.05e-8)
        assert float(rows[0]["gauge_pressure"]) == pytest.approx(1.1e-8)

        index = json.loads((tmp_path / "figure_index.json").read_text())
        assert index["schema_version"] == "1.0"
        kinds = sorted(t["kind"] for t in index["tables"])
        assert kinds == ["pressure_comparison", "rates"]


class TestRunReport:
    def test_hash_ignores_timings_and_location(self):
        a = synthetic_report(output_dir="/tmp/a", duration=0.1)
        b = synthetic_report(output_dir="/tmp/b", duration=9.0)
        assert a.report_hash == b.report_hash

    def test_hash_tracks_results(self):
        a = synthetic_report()
        b = synthetic_report(datasets=[record_for("xe_0", [11, 5, 0])])
        assert a.report_hash != b.report_hash

    def test_write_report_validates(self, tmp_path):
        report = synthetic_report()
        path = write_report(report, tmp_path / "report.json")
        data = json.loads(path.read_text())
        assert data["report_hash"] == report.report_hash
        assert data["datasets"][0]["spectrum_hash"]
        assert data["stages"][0]["duration_s"] == 0.1
        assert data["converged"] is True
        assert "numpy" in data["versions"]

    def test_map_parameters_named(self, tmp_path):
        report = synthetic_report()
        report.map_params = ModelParams(0.6, 300.0, [DatasetParams(1e-8, 60.0, 100.0, 0.0)])
        data = json.loads(write_report(report, tmp_path / "r.json").read_text())
        assert data["map"]["alpha"] == 0.6
        assert data["map"]["pressure_0"] == 1e-8

    def test_unknown_dataset(self):
        with pytest.raises(KeyError):
            synthetic_report().dataset("kr_0")


class TestClosureBookkeeping:
    def test_coverage_fractions(self):
        trials = [
            TrialResult(0, converged=True, alpha_med=0.6, alpha_covered=True, ts_ul_95=320.0, ts_covered=True),
            TrialResult(1, converged=True, alpha_med=0.5, alpha_covered=False, ts_ul_95=330.0, ts_covered=True),
            TrialResult(2, converged=False, alpha_med=0.7, alpha_covered=True, ts_ul_95=290.0, ts_covered=False),
            TrialResult(3, error="MAP fit did not converge"),
        ]
        result = ClosureResult("Xe", "spectrum", "b" * 64, trials)
        assert len(result.completed) == 3
        assert result.alpha_coverage == pytest.approx(2 / 3)
        assert result.ts_coverage == pytest.approx(2 / 3)
        assert result.convergence_rate == pytest.approx(2 / 3)
        assert result.to_dict()["failed"] == 1

    def test_write_closure(self, tmp_path):
        result = ClosureResult("Kr", "full", "c" * 64, [TrialResult(0, converged=True, alpha_covered=True)])
        path = write_closure(result, tmp_path)
        assert path.name == "closure_kr_full.json"
        assert json.loads(path.read_text())["alpha_coverage"] == 1.0
        assert len(read_rows(tmp_path / "closure_kr_full.csv")) == 1

    @pytest.mark.parametrize("kwargs", [{"mode": "asimov"}, {"trials": 0}])
    def test_invalid_study(self, test_config, kwargs):
        with pytest.raises(ConfigurationError):
            run_closure(test_config, **kwargs)

    def test_only_pileup_pressures(self, test_config):
        with pytest.raises(ConfigurationError, match="pile-up"):
            run_closure(test_config.with_overrides(pressures=(2e-7,)))


class TestCommandLine:
    def args(self, tmp_path, *extra):
        return [*extra, "--env", "test", "--out", str(tmp_path / "cli"), "--logs-dir", str(tmp_path / "logs")]

    def test_unknown_environment_is_config_error(self, tmp_path):
        assert cli.main(["report", "--env", "nope", "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_invalid_file_is_config_error(self, tmp_path):
        path = tmp_path / "bad.yml"
        path.write_text(yaml.safe_dump(raw_environment(sampler={"chains": 1})))
        assert cli.main(["fit", "--config", str(path), "--out", str(tmp_path)]) == cli.EXIT_CONFIG

    def test_reconstruct_without_traces(self, tmp_path):
        assert cli.main(self.args(tmp_path, "reconstruct")) == cli.EXIT_CONFIG

    def test_stage_failure(self, tmp_path, monkeypatch, capsys):
        def failing(*args, **kwargs):
            raise StageError("fit", "diverged", {"summary": "fit/fit_summary.json"})

        monkeypatch.setattr(cli, "run_experiment", failing)
        assert cli.main(self.args(tmp_path, "report")) == cli.EXIT_STAGE
        assert "fit/fit_summary.json" in capsys.readouterr().err

    @pytest.mark.parametrize("converged, code", [(True, cli.EXIT_OK), (False, cli.EXIT_DIAGNOSTICS)])
    def test_diagnostics_exit_code(self, tmp_path, monkeypatch, converged, code):
        report = SimpleNamespace(
            converged=converged, background=None, paths={"report": "report.json"},
            report_hash="d" * 64, pressure_table=lambda: [],
        )
        monkeypatch.setattr(cli, "run_experiment", lambda *a, **k: report)
        assert cli.main(self.args(tmp_path, "report")) == code

    def test_seed_override(self, tmp_path, monkeypatch):
        seen = {}

        def capture(config, *args, **kwargs):
            seen["seed"] = config.seed
            raise StageError("calibration", "stop")

        monkeypatch.setattr(cli, "run_experiment", capture)
        cli.main(self.args(tmp_path, "report", "--seed", "123"))
        assert seen["seed"] == 123

    def test_run_flags_replace_file_values(self, tmp_path, monkeypatch):
        seen = {}

        def capture(config, args):
            seen["config"] = config
            return cli.EXIT_OK

        monkeypatch.setitem(cli.COMMANDS, "simulate", capture)
        code = cli.main([
            "simulate", "--gas", "Kr", "--pressure", "5e-8", "--pressure", "1e-8", "--alpha", "0.3",
            "--ts", "400", "--duration", "2", "--seed", "9", "--out", str(tmp_path / "flags"),
        ])
        config = seen["config"]
        assert code == cli.EXIT_OK
        assert config.gas == "Kr"
        assert list(config.pressures) == [5e-8, 1e-8]
        assert config.alpha == 0.3
        assert config.surface_temperature == 400.0
        assert config.duration == 2.0
        assert config.seed == 9
        assert config.output_dir == (tmp_path / "flags").resolve()

    @pytest.mark.parametrize("flags", [["--pressure", "1e-3"], ["--gas", "Unobtainium"], ["--alpha", "1.5"]])
    def test_invalid_run_flags_are_config_errors(self, tmp_path, flags):
        assert cli.main(self.args(tmp_path, "simulate", *flags)) == cli.EXIT_CONFIG

    def test_reconstruct_flags(self):
        args = cli.build_parser().parse_args(["reconstruct", "--in", "run/xe_0.nstrace", "--template", "auto"])
        assert args.input == Path("run/xe_0.nstrace")
        assert args.template == cli.TEMPLATE_AUTO

    def test_reconstruct_missing_input(self, tmp_path):
        code = cli.main(self.args(tmp_path, "reconstruct", "--in", str(tmp_path / "nothing")))
        assert code == cli.EXIT_CONFIG

    def test_reconstruct_missing_template(self, tmp_path, osc):
        trace = simulate_trajectory(
            osc, NoiseConfig.silent(), ImpulseTrain.empty(), 1e-3, np.random.default_rng(0), metadata={"seed": 0}
        )
        path = write_trace(trace, tmp_path / "xe_0.nstrace")
        code = cli.main(self.args(
            tmp_path, "reconstruct", "--in", str(path), "--template", str(tmp_path / "missing" / "detector")
        ))
        assert code == cli.EXIT_CONFIG


@pytest.mark.slow
class TestEndToEnd:
    @pytest.fixture(scope="class")
    def run(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("run")
        config = load_run_config(env="test", overrides={"output_dir": str(out / "a")})
        return config, out / "logs", run_experiment(config, out / "logs")

    def test_pileup_dataset_excluded_from_fit(self, run):
        _, _, report = run
        record = report.dataset("xe_1")
        assert record.excluded
        assert "pile-up" in record.exclusion_reason
        assert "xe_1" not in report.model_counts
        assert [p.dataset_id for p in report.summary.pressures] == ["xe_0"]

    def test_background_sensitivity(self, run):
        _, _, report = run
        assert report.dataset(BACKGROUND_ID).n_collisions == 0
        assert report.background is not None

    def test_model_matches_spectrum_binning(self, run):
        _, _, report = run
        assert report.model_counts["xe_0"].shape == report.dataset("xe_0").spectrum.counts.shape

    def test_files_written(self, run):
        config, _, report = run
        out = config.output_dir
        for name in ("report.json", "fit/fit_summary.json", "fit/posterior_samples.csv",
                     "spectra/xe_0.csv", "spectra/xe_0.json", "events/xe_0.csv",
                     "figures/rates_xe_0.csv", "figures/pressure_comparison_xe.csv",
                     "figures/figure_index.json", "calibration/detector.npz"):
            assert (out / name).exists(), name
        assert not (out / "traces").exists()
        data = json.loads((out / "report.json").read_text())
        assert data["config_hash"] == config.config_hash

    def test_every_dataset_traceable(self, run):
        config, logs, report = run
        assert report.audit["status"] == "complete"
        auditor = ProvenanceAuditor(logs)
        for record in report.datasets:
            assert auditor.verify_traceability(config.run_id, record.dataset_id)["traceable"]

    def test_rerun_is_bit_identical(self, run, tmp_path):
        config, _, report = run
        again = run_experiment(config.with_overrides(output_dir=tmp_path), tmp_path / "logs")
        assert again.report_hash == report.report_hash
        for a, b in zip(report.datasets, again.datasets):
            np.testing.assert_array_equal(a.spectrum.counts, b.spectrum.counts)


@pytest.mark.slow
def test_cli_stages_in_sequence(tmp_path):
    args = ["--env", "test", "--out", str(tmp_path / "cli"), "--logs-dir", str(tmp_path / "logs")]
    assert cli.main(["simulate", *args]) == cli.EXIT_OK
    assert (tmp_path / "cli" / "traces" / "xe_0.nstrace").exists()
    assert cli.main(["reconstruct", *args]) == cli.EXIT_OK
    assert (tmp_path / "cli" / "spectra" / "background.json").exists()
    assert cli.main(["fit", *args]) in (cli.EXIT_OK, cli.EXIT_DIAGNOSTICS)
    assert (tmp_path / "cli" / "fit" / "fit_summary.json").exists()


@pytest.mark.slow
def test_cli_stages_from_flags(tmp_path):
    run = ["--env", "test", "--gas", "Xe", "--pressure", "5e-8", "--alpha", "0.6", "--ts", "293",
           "--duration", "0.4", "--seed", "11", "--logs-dir", str(tmp_path / "logs")]
    assert cli.main(["simulate", *run, "--out", str(tmp_path / "sim")]) == cli.EXIT_OK
    trace = tmp_path / "sim" / "traces" / "xe_0.nstrace"
    header = read_trace_header(trace)
    assert header["seed"] == 11
    assert header["spawn_key"] == [3]
    assert header["metadata"]["pressure"] == 5e-8

    assert cli.main(["reconstruct", *run, "--in", str(trace), "--template", "auto", "--out", str(tmp_path / "auto")]) == 0
    template = str(tmp_path / "sim" / "calibration" / "detector")
    assert cli.main(["reconstruct", *run, "--in", str(trace), "--template", template, "--out", str(tmp_path / "saved")]) == 0

    assert (tmp_path / "auto" / "calibration" / "detector.json").exists()
    assert (tmp_path / "auto" / "events" / "xe_0.csv").exists()
    assert not (tmp_path / "auto" / "spectra" / "background.csv").exists()
    assert (tmp_path / "auto" / "spectra" / "xe_0.csv").read_text() == (tmp_path / "saved" / "spectra" / "xe_0.csv").read_text()


@pytest.mark.slow
def test_pileup_spectrum_departs_from_single_collision_model(tmp_path):
    # no in-situ pulses inside the 0.4 s traces; overlapping kicks at 1e-6 mbar can hide one
    config = load_run_config(env="test", overrides={
        "output_dir": str(tmp_path / "run"),
        "pressures": [5e-8, 1e-6],
        "calibration": {"period": 1.0},
    })
    report = run_experiment(config, tmp_path / "logs")
    settings = likelihood_settings(config)
    noise = report.dataset(BACKGROUND_ID).spectrum
    deviation = {
        r.dataset_id: max_deviation(single_collision_residuals(
            r.spectrum, r.pressure, noise, config.alpha, config.surface_temperature,
            report.calibration["sigma_q"], settings,
        ))
        for r in report.datasets if not r.background
    }
    assert report.dataset("xe_1").excluded
    assert deviation["xe_1"] > 3.0
    assert deviation["xe_0"] < 3.0

    skipped = [e for e in ProvenanceLogger(config.run_id, tmp_path / "logs").get_logs(Stage.FIT)
               if e["dataset_id"] == "xe_1"]
    assert skipped[0]["status"] == "skipped"
    assert skipped[0]["details"]["max_deviation"] == pytest.approx(deviation["xe_1"])


@pytest.mark.slow
def test_spectrum_closure_trials(test_config):
    result = run_closure(test_config, trials=3, mode="spectrum")
    assert len(result.trials) == 3
    for trial in result.completed:
        assert 0.0 <= trial.alpha_lo <= trial.alpha_med <= trial.alpha_hi <= 1.0
        assert trial.ts_ul_95 >= 293.0
