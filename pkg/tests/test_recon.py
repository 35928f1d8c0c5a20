"""Tests for the reconstruction chain: filtering, search, cuts, calibration and binning."""

import numpy as np
import pytest

from src.dynsim import (
    ImpulseTrain,
    NoiseConfig,
    predicted_resolution,
    pulses_at,
    schedule_calibration_pulses,
    simulate_trajectory,
)
from src.dynsim.calibration import simulate_calibration_run
from src.errors import (
    AlignmentError,
    BinningError,
    DetectorResponseError,
    InsufficientStatisticsError,
    SchemaVersionError,
)
from src.recon import (
    AmplitudeSeries,
    BinnedSpectrum,
    CandidateFlag,
    CandidateTable,
    amplitudes_at,
    apply_gof_cut,
    apply_noise_cut,
    apply_stability_cut,
    bin_events,
    build_template,
    compute_gof,
    extract_segments,
    filter_trace,
    gof_threshold,
    measure_resolution_and_linearity,
    read_events,
    read_spectrum,
    reconstruct_trace,
    scan_events,
    veto_calibration,
    write_events,
    write_spectrum,
)
from src.recon.chain import shadow_separation
from src.recon.template import template_half_width

FS = 5e6
WINDOW = 50e-6


def noise_trace(osc, noise, duration, seed, train=None):
    train = ImpulseTrain.empty() if train is None else train
    return simulate_trajectory(osc, noise, train, duration, np.random.default_rng(seed))


@pytest.fixture(scope="module")
def noise_series(osc, noise):
    """One second of filtered pure noise."""
    return filter_trace(noise_trace(osc, noise, 1.0, 21), osc)


class TestMatchedFilter:
    def test_noiseless_pulse_amplitude(self, osc):
        trace = noise_trace(osc, NoiseConfig.silent(), 0.1, 0, pulses_at([0.04], [500.0]))
        series = filter_trace(trace, osc)
        assert amplitudes_at(series, [0.04])[0] == pytest.approx(500.0, abs=5.0)

    @pytest.mark.parametrize("amplitude", [100.0, 400.0, 1000.0])
    def test_normalization_over_calibration_range(self, osc, amplitude):
        trace = noise_trace(osc, NoiseConfig.silent(), 0.1, 0, pulses_at([0.0731], [amplitude]))
        series = filter_trace(trace, osc)
        assert amplitudes_at(series, [0.0731])[0] == pytest.approx(amplitude, rel=0.01)

    def test_zero_trace_gives_zero_output(self, osc):
        series = filter_trace(noise_trace(osc, NoiseConfig.silent(), 0.1, 0), osc)
        assert np.all(series.values == 0)

    def test_pulse_near_window_edge(self, osc, noise):
        t = 0.1 - 3e-6
        trace = noise_trace(osc, noise, 0.2, 5, pulses_at([t], [700.0]))
        sigma_q = predicted_resolution(osc, noise)
        assert abs(amplitudes_at(filter_trace(trace, osc), [t])[0] - 700.0) < 4 * sigma_q

    def test_noise_output_rms_is_stable(self, noise_series):
        per_window = noise_series.values.reshape(-1, noise_series.window_samples).std(axis=1)
        assert np.all(np.abs(per_window / per_window.mean() - 1) < 0.10)

    def test_noise_output_rms_matches_prediction(self, noise_series, osc, noise):
        assert noise_series.values.std() == pytest.approx(predicted_resolution(osc, noise), rel=0.15)

    def test_superposition(self, osc, noise):
        both = noise_trace(osc, noise, 0.1, 9, pulses_at([0.03, 0.035], [800.0, 500.0]))
        first = noise_trace(osc, noise, 0.1, 9, pulses_at([0.03], [800.0]))
        # identical seeds, so the difference is the second pulse's response alone
        difference = (
            amplitudes_at(filter_trace(both, osc), [0.03, 0.035])
            - amplitudes_at(filter_trace(first, osc), [0.03, 0.035])
        )
        assert abs(difference[0]) < 20.0
        assert difference[1] == pytest.approx(500.0, abs=20.0)


class TestScan:
    def test_one_candidate_per_window(self, noise_series):
        candidates = scan_events(AmplitudeSeries(noise_series.values[:500_000], FS, 500_000), WINDOW)
        assert len(candidates) == 2000

    def test_large_pulse_dominates_one_window(self, osc, noise):
        # two samples before a window boundary
        t = 0.05 - 2 / FS
        trace = noise_trace(osc, noise, 0.1, 13, pulses_at([t], [1000.0]))
        series = filter_trace(trace, osc)
        candidates = scan_events(series, WINDOW, shadow_separation=shadow_separation(osc))
        large = np.flatnonzero(candidates.abs_amplitude > 600.0)
        assert large.size == 1
        assert candidates.window_index[large[0]] == int(t / WINDOW)

    def test_sign_is_kept(self, osc):
        trace = noise_trace(osc, NoiseConfig.silent(), 0.1, 0, pulses_at([0.0201], [-400.0]))
        candidates = scan_events(filter_trace(trace, osc), WINDOW)
        assert candidates.amplitude.min() == pytest.approx(-400.0, rel=0.01)

    def test_search_bias_on_noise(self, noise_series):
        candidates = scan_events(noise_series, WINDOW)
        assert candidates.abs_amplitude.mean() > noise_series.values.std()

    def test_candidate_view(self, noise_series):
        candidates = scan_events(noise_series, WINDOW)
        candidates.add_flag(np.arange(len(candidates)) == 3, CandidateFlag.NOISE)
        view = candidates[3]
        assert view.abs_amplitude == abs(view.amplitude)
        assert view.noise_cut and not view.gof_cut

    def test_flags_cannot_be_written_directly(self, noise_series):
        candidates = scan_events(noise_series, WINDOW)
        with pytest.raises(ValueError):
            candidates.flags[0] = 0


class TestNoiseCut:
    def test_gaussian_tail_fraction(self, noise_series, osc):
        candidates = scan_events(noise_series, WINDOW)
        stats = apply_noise_cut(candidates, noise_series, exclusion=shadow_separation(osc))
        assert 0.139 <= stats["fraction"] <= 0.179

    def test_noise_burst_flagged(self, osc, noise):
        trace = noise_trace(osc, noise, 0.5, 31)
        burst = slice(int(0.2 * FS), int(0.22 * FS))
        readout_sigma = noise.readout_noise_density * np.sqrt(FS / 2)
        trace.samples[burst] += 4 * readout_sigma * np.random.default_rng(1).standard_normal(burst.stop - burst.start)
        series = filter_trace(trace, osc)
        candidates = scan_events(series, WINDOW)
        apply_noise_cut(candidates, series, exclusion=shadow_separation(osc))
        inside = (candidates.time > 0.2) & (candidates.time < 0.22)
        assert candidates.flagged(CandidateFlag.NOISE)[inside].mean() > 0.9

    def test_silent_trace_flags_nothing(self, osc):
        series = filter_trace(noise_trace(osc, NoiseConfig.silent(), 0.1, 0), osc)
        candidates = scan_events(series, WINDOW)
        apply_noise_cut(candidates, series, exclusion=shadow_separation(osc))
        assert not np.any(candidates.flagged(CandidateFlag.NOISE))


class TestStabilityCut:
    @staticmethod
    def table(n):
        return CandidateTable(np.arange(n) * 250, np.zeros(n), FS, WINDOW)

    def test_constant_monitor(self):
        candidates = self.table(1000)
        apply_stability_cut(candidates, np.ones(1000))
        assert not np.any(candidates.flagged(CandidateFlag.STABILITY))

    def test_gaussian_monitor(self, rng):
        candidates = self.table(20_000)
        stats = apply_stability_cut(candidates, 1 + 0.02 * rng.standard_normal(20_000))
        assert 0.139 <= stats["fraction"] <= 0.179

    def test_power_sag(self, rng):
        monitor = 1 + 0.002 * rng.standard_normal(10_000)
        monitor[4000:5000] = 0.9
        candidates = self.table(10_000)
        apply_stability_cut(candidates, monitor)
        assert np.all(candidates.flagged(CandidateFlag.STABILITY)[4000:5000])

    def test_misaligned_monitor(self):
        with pytest.raises(AlignmentError):
            apply_stability_cut(self.table(100), np.ones(99))


class TestTemplateAndGof:
    def test_identical_segments(self):
        segment = np.sin(np.linspace(0, 3, 101)) * 5
        template = build_template(np.tile(segment, (800, 1)), FS)
        np.testing.assert_allclose(template.waveform, segment / segment[np.argmax(np.abs(segment))])

    def test_too_few_segments(self):
        with pytest.raises(InsufficientStatisticsError):
            build_template(np.ones((10, 21)), FS)

    def test_template_peak_aligned_with_pulse(self, osc):
        times = 0.005 * np.arange(1, 60) + 25e-6
        trace = noise_trace(osc, NoiseConfig.silent(), 0.3, 0, pulses_at(times, np.full(times.size, 1040.0)))
        series = filter_trace(trace, osc)
        half = template_half_width(osc.period, FS)
        template = build_template(extract_segments(series, np.rint(times * FS).astype(int), half), FS)
        assert abs(template.reference_index - half) <= 1
        assert template.span >= 10 * osc.period

    def test_split_halves_agree(self, calibration_run, osc):
        half = template_half_width(osc.period, FS)
        segments = extract_segments(calibration_run.series, calibration_run.sample_indices(), half)
        first = segments[::2].mean(axis=0)
        second = segments[1::2].mean(axis=0)
        standard_error = segments.std(axis=0, ddof=1) * np.sqrt(2.0 / (segments.shape[0] / 2))
        assert np.all(np.abs(first - second) < 5 * standard_error + 1e-9)

    def test_calibration_gof_removes_two_percent(self, detector_calibration):
        gof = detector_calibration.calibration_gof
        assert np.mean(gof > detector_calibration.gof_threshold) == pytest.approx(0.02, abs=0.01)

    def test_template_shaped_events_accepted(self, osc, noise, detector_calibration):
        run = simulate_calibration_run(osc, noise, [600.0], 400, np.random.default_rng(600))
        table = CandidateTable(run.sample_indices(), run.reconstructed, FS, WINDOW)
        apply_gof_cut(table, run.series, detector_calibration.template, detector_calibration.gof_threshold)
        assert np.mean(~table.flagged(CandidateFlag.GOF)) >= 0.95

    def test_wrong_frequency_ring_flagged(self, noise_series, detector_calibration, osc):
        values = noise_series.values.copy()
        centre = 400_000
        t = (np.arange(-2000, 2001)) / FS
        values[centre - 2000:centre + 2001] += 800.0 * np.cos(2 * osc.omega_damped * t) * np.exp(-np.abs(t) / 1e-4)
        series = AmplitudeSeries(values, FS, noise_series.window_samples)
        table = CandidateTable([centre], [values[centre]], FS, WINDOW)
        apply_gof_cut(table, series, detector_calibration.template, detector_calibration.gof_threshold)
        assert table.flagged(CandidateFlag.GOF)[0]

    def test_small_candidates_not_evaluated(self, noise_series, detector_calibration):
        candidates = scan_events(noise_series, WINDOW)
        gof = compute_gof(candidates, noise_series, detector_calibration.template, min_amplitude=1e9)
        assert np.all(np.isnan(gof))

    def test_threshold_is_percentile(self):
        assert gof_threshold(np.arange(101.0)) == pytest.approx(98.0)


class TestCalibrationVeto:
    @staticmethod
    def table_with_pulses(schedule, duration=3.0, extra=()):
        n = int(round(duration / WINDOW))
        amplitude = np.zeros(n)
        index = np.arange(n) * 250
        for t, q in list(zip(schedule.times, schedule.amplitudes)) + list(extra):
            w = int(t / WINDOW + 1e-9)
            amplitude[w] = q
            index[w] = int(round(t * FS))
        return CandidateTable(index, amplitude, FS, WINDOW)

    def test_every_pulse_vetoed(self):
        schedule = schedule_calibration_pulses(3.0)
        table = self.table_with_pulses(schedule)
        vetoed = veto_calibration(table, schedule)
        assert vetoed == 27
        pulse_windows = np.flatnonzero(table.abs_amplitude > 900)
        assert pulse_windows.size == 9
        assert np.all(table.flagged(CandidateFlag.CALIBRATION_VETO)[pulse_windows])

    def test_no_schedule(self):
        table = self.table_with_pulses(ImpulseTrain.empty())
        assert veto_calibration(table, None) == 0
        assert not np.any(table.flagged(CandidateFlag.CALIBRATION_VETO))

    def test_nearby_collision_survives(self):
        schedule = schedule_calibration_pulses(3.0)
        table = self.table_with_pulses(schedule, extra=[(0.301, 400.0)])
        veto_calibration(table, schedule)
        window = int(0.301 / WINDOW)
        assert not table.flagged(CandidateFlag.CALIBRATION_VETO)[window]

    def test_missing_pulse(self):
        schedule = schedule_calibration_pulses(3.0)
        table = self.table_with_pulses(schedule)
        table.amplitude[int(0.9 / WINDOW + 1e-9)] = 500.0
        with pytest.raises(DetectorResponseError):
            veto_calibration(table, schedule)


class TestResolutionAndLinearity:
    def test_noiseless_groups(self):
        groups = {a: np.full(60, a) for a in (100.0, 500.0, 1000.0)}
        report = measure_resolution_and_linearity(groups)
        assert report.slope == pytest.approx(1.0, abs=1e-6)
        assert report.intercept == pytest.approx(0.0, abs=1e-6)
        assert np.all(report.sigmas == 0)

    def test_too_few_pulses(self):
        with pytest.raises(InsufficientStatisticsError):
            measure_resolution_and_linearity({100.0: np.ones(10), 200.0: np.ones(60)})

    def test_simulated_linearity(self, osc, noise):
        amplitudes = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0, 1040.0]
        run = simulate_calibration_run(osc, noise, amplitudes, 60, np.random.default_rng(77))
        report = measure_resolution_and_linearity(run.groups())
        assert 0.98 <= report.slope <= 1.02
        assert abs(report.intercept) < 2 * report.intercept_error + 1.0
        sigma_high = report.sigmas[report.amplitudes == 1040.0][0]
        sigma_mid = report.sigmas[report.amplitudes == 400.0][0]
        # 60 pulses per point leave ~9% sampling error on each width
        assert sigma_high == pytest.approx(sigma_mid, rel=0.3)


class TestBinning:
    def test_empty_table(self):
        table = CandidateTable(np.empty(0), np.empty(0), FS, WINDOW)
        spectrum = bin_events(table)
        assert spectrum.total == 0
        assert spectrum.live_time == 0

    def test_counts_and_range(self):
        amplitude = np.array([120.0, 160.0, -170.0, 400.0, 990.0, 1200.0])
        table = CandidateTable(np.arange(6) * 250, amplitude, FS, WINDOW)
        spectrum = bin_events(table)
        assert spectrum.total == 4
        assert spectrum.counts[0] == 2

    def test_live_time_after_cuts(self):
        n = 1000
        table = CandidateTable(np.arange(n) * 250, np.zeros(n), FS, WINDOW)
        table.add_flag(np.arange(n) < 200, CandidateFlag.NOISE)
        table.add_flag((np.arange(n) >= 150) & (np.arange(n) < 300), CandidateFlag.STABILITY)
        table.add_flag(np.arange(n) == 999, CandidateFlag.GOF)
        spectrum = bin_events(table)
        assert spectrum.live_time == pytest.approx(0.7 * spectrum.raw_time)

    def test_bad_edges(self):
        table = CandidateTable(np.arange(3) * 250, np.ones(3), FS, WINDOW)
        with pytest.raises(BinningError):
            bin_events(table, edges=[150.0, 200.0, 200.0, 300.0])


class TestFiles:
    def test_events_round_trip(self, noise_series, tmp_path):
        table = scan_events(AmplitudeSeries(noise_series.values[:50_000], FS, 50_000), WINDOW)
        table.add_flag(np.arange(len(table)) % 7 == 0, CandidateFlag.NOISE | CandidateFlag.GOF)
        loaded = read_events(write_events(table, tmp_path / "events.csv"))
        np.testing.assert_array_equal(loaded.sample_index, table.sample_index)
        np.testing.assert_array_equal(loaded.flags, table.flags)
        np.testing.assert_allclose(loaded.amplitude, table.amplitude)

    def test_spectrum_round_trip(self, tmp_path):
        spectrum = BinnedSpectrum(
            np.arange(150.0, 251.0, 25.0), [3, 2, 0, 1], 12.5, 20.0,
            {"dataset_id": "xe-1", "gas": "Xe", "pressure": 5e-8},
        )
        write_spectrum(spectrum, tmp_path / "xe-1")
        loaded = read_spectrum(tmp_path / "xe-1")
        np.testing.assert_array_equal(loaded.counts, spectrum.counts)
        np.testing.assert_array_equal(loaded.bin_edges, spectrum.bin_edges)
        assert loaded.live_time == 12.5
        assert loaded.metadata["gas"] == "Xe"

    def test_spectrum_unknown_major_version(self, tmp_path):
        spectrum = BinnedSpectrum(np.array([150.0, 175.0]), [1], 1.0)
        _, meta_path = write_spectrum(spectrum, tmp_path / "s")
        meta_path.write_text(meta_path.read_text().replace('"1.0"', '"3.0"'))
        with pytest.raises(SchemaVersionError):
            read_spectrum(tmp_path / "s")


class TestChain:
    def test_reconstruct_with_calibration_pulses(self, osc, noise, detector_calibration):
        schedule = schedule_calibration_pulses(1.0)
        trace = noise_trace(osc, noise, 1.0, 41, schedule)
        result = reconstruct_trace(trace, osc, detector_calibration)
        summary = result.spectrum.metadata["cuts"]
        assert summary["calibration_veto"] == 9
        assert result.spectrum.live_time < result.spectrum.raw_time
        assert result.spectrum.metadata["sigma_q_calibration"] == detector_calibration.sigma_q
