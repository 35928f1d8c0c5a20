"""Tests for the likelihood, MAP fits, posterior sampling and summaries."""

import logging

import numpy as np
import pytest
from scipy.stats import kstest, poisson, truncnorm

from src.config import ANALYSIS_RULES
from src.errors import BinningError, ConfigurationError, DomainError, LikelihoodDomainError
from src.inference import (
    DatasetParams,
    LikelihoodSettings,
    ModelParams,
    Posterior,
    PressureEstimate,
    background_only_fit,
    compare_to_gauge,
    dataset_log_likelihood,
    effective_sample_size,
    estimate_pressures,
    fit_map,
    joint_log_posterior,
    nb_log_pmf,
    nb_sample,
    run_mcmc,
    sample_posterior,
    signal_likelihood_ratio,
    simulate_spectrum,
    split_rhat,
    summarize,
    write_summary,
)
from src.inference.likelihood import sigma_q_log_constraint
from src.pipeline.config import load_run_config
from src.recon import BinnedSpectrum

TRUTH = DatasetParams(pressure=1e-8, sigma_q=60.0, bg_amplitude=2e4, bg_mean=0.0)


@pytest.fixture(scope="module")
def xe_settings():
    from src.kinetics import get_gas

    return LikelihoodSettings(gas=get_gas("Xe"), kernel_method="quadrature")


@pytest.fixture(scope="module")
def kr_settings():
    from src.kinetics import get_gas

    return LikelihoodSettings(gas=get_gas("Kr"), kernel_method="quadrature")


def spectra_at(settings, alpha, pressures, live_time, seed=None, surface_temperature=293.0):
    rng = None if seed is None else np.random.default_rng(seed)
    return [
        simulate_spectrum(
            settings, alpha, surface_temperature, DatasetParams(p, 60.0, 2e4, 0.0), live_time, rng,
            metadata={"dataset_id": f"{settings.gas.name.lower()}-{i}"},
        )
        for i, p in enumerate(pressures)
    ]


def params_for(alpha, pressures, surface_temperature=293.0):
    return ModelParams(alpha, surface_temperature, [DatasetParams(p, 60.0, 2e4, 0.0) for p in pressures])


class TestNegativeBinomial:
    def test_poisson_limit(self):
        k = np.arange(51)
        for mu in (0.5, 5.0, 30.0):
            np.testing.assert_allclose(nb_log_pmf(k, mu, 1e-10), poisson.logpmf(k, mu), atol=1e-6)

    def test_zero_overdispersion_is_poisson(self):
        np.testing.assert_array_equal(nb_log_pmf(np.arange(20), 4.0, 0.0), poisson.logpmf(np.arange(20), 4.0))

    def test_normalization(self):
        total = np.exp(nb_log_pmf(np.arange(501), 7.3, 0.05)).sum()
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_mean_and_variance(self):
        k = np.arange(2001)
        p = np.exp(nb_log_pmf(k, 20.0, 0.05))
        mean = np.sum(k * p)
        assert mean == pytest.approx(20.0, rel=1e-9)
        assert np.sum((k - mean) ** 2 * p) == pytest.approx(21.0, rel=1e-9)

    def test_zero_count(self):
        assert nb_log_pmf(0, 3.0, 0.05) == pytest.approx(-(3.0 / 0.05) * np.log1p(0.05))

    def test_sampled_variance(self):
        draws = nb_sample(np.full(1_000_000, 20.0), 0.05, np.random.default_rng(5))
        assert draws.mean() == pytest.approx(20.0, abs=0.02)
        assert draws.var() == pytest.approx(21.0, abs=0.1)

    def test_zero_mean_sampling(self, rng):
        assert np.all(nb_sample(np.zeros(10), 0.05, rng) == 0)

    @pytest.mark.parametrize("mu", [0.0, -1.0, np.inf])
    def test_bad_expectation(self, mu):
        with pytest.raises(LikelihoodDomainError):
            nb_log_pmf(3, mu)


class TestModelParams:
    def test_vector_layout(self):
        params = params_for(0.5, [1e-8, 2e-8])
        assert ModelParams.from_vector(params.to_vector(), 2) == params
        assert len(ModelParams.names(2)) == params.to_vector().size == 10

    def test_wrong_vector_length(self):
        with pytest.raises(DomainError):
            ModelParams.from_vector(np.ones(7), 2)

    def test_with_dataset(self):
        params = params_for(0.5, [1e-8, 2e-8]).with_dataset(1, pressure=5e-8)
        assert params.datasets[1].pressure == 5e-8
        assert params.datasets[0].pressure == 1e-8

    def test_unknown_total_constraint(self, xe):
        with pytest.raises(ConfigurationError):
            LikelihoodSettings(gas=xe, total_constraint="conditional")


class TestDatasetLikelihood:
    def test_empty_limit(self, xe_settings):
        spectrum = BinnedSpectrum(np.arange(150.0, 1001.0, 25.0), np.zeros(34), 1e-7, metadata={"gas": "Xe"})
        value = dataset_log_likelihood(spectrum, 0.5, 293.0, DatasetParams(1e-9, 60.0, 1.0), xe_settings)
        assert -1e-3 < value <= 0.0

    def test_single_bin_maximum(self):
        mu = np.linspace(30.0, 50.0, 2001)
        best = mu[np.argmax(nb_log_pmf(40, mu, 0.05))]
        assert best == pytest.approx(40.0, abs=1.5)

    def test_truth_beats_perturbed_alpha(self, xe_settings):
        spectrum = spectra_at(xe_settings, 0.6, [1e-8], 10.0, seed=3)[0]
        at_truth = dataset_log_likelihood(spectrum, 0.6, 293.0, TRUTH, xe_settings)
        for alpha in (0.3, 0.9):
            assert at_truth > dataset_log_likelihood(spectrum, alpha, 293.0, TRUTH, xe_settings)

    def test_bins_below_threshold(self, xe_settings):
        spectrum = BinnedSpectrum(np.arange(100.0, 301.0, 25.0), np.ones(8), 1.0)
        with pytest.raises(BinningError):
            dataset_log_likelihood(spectrum, 0.5, 293.0, TRUTH, xe_settings)

    def test_multinomial_ignores_normalization(self, xe):
        settings = LikelihoodSettings(gas=xe, kernel_method="quadrature", total_constraint="multinomial")
        spectrum = spectra_at(settings, 0.6, [1e-8], 10.0, seed=4)[0]
        base = dataset_log_likelihood(spectrum, 0.6, 293.0, TRUTH, settings)
        doubled = DatasetParams(2 * TRUTH.pressure, TRUTH.sigma_q, 2 * TRUTH.bg_amplitude, TRUTH.bg_mean)
        assert dataset_log_likelihood(spectrum, 0.6, 293.0, doubled, settings) == pytest.approx(base, abs=1e-6)

    def test_extended_sees_normalization(self, xe_settings):
        spectrum = spectra_at(xe_settings, 0.6, [1e-8], 10.0, seed=4)[0]
        doubled = DatasetParams(2 * TRUTH.pressure, TRUTH.sigma_q, 2 * TRUTH.bg_amplitude, TRUTH.bg_mean)
        assert dataset_log_likelihood(spectrum, 0.6, 293.0, doubled, xe_settings) < dataset_log_likelihood(
            spectrum, 0.6, 293.0, TRUTH, xe_settings
        )


class TestJointPosterior:
    @pytest.fixture(scope="class")
    def spectra(self, xe_settings):
        return spectra_at(xe_settings, 0.6, [1e-8, 3e-8], 5.0, seed=8)

    @pytest.mark.parametrize("alpha", [-0.01, 1.01])
    def test_alpha_bounds(self, spectra, xe_settings, alpha):
        params = params_for(alpha, [1e-8, 3e-8])
        assert joint_log_posterior(spectra, params, xe_settings) == -np.inf

    def test_surface_temperature_floor(self, spectra, xe_settings):
        params = params_for(0.6, [1e-8, 3e-8], surface_temperature=280.0)
        assert joint_log_posterior(spectra, params, xe_settings) == -np.inf

    def test_non_positive_pressure(self, spectra, xe_settings):
        params = params_for(0.6, [0.0, 3e-8])
        assert joint_log_posterior(spectra, params, xe_settings) == -np.inf

    def test_single_dataset_additivity(self, spectra, xe_settings):
        params = ModelParams(0.6, 293.0, [DatasetParams(1.1e-8, 57.0, 2e4, 3.0)])
        expected = dataset_log_likelihood(spectra[0], 0.6, 293.0, params.datasets[0], xe_settings)
        expected += sigma_q_log_constraint(57.0, 60.0, 0.10)
        assert joint_log_posterior(spectra[:1], params, xe_settings) == pytest.approx(expected, rel=1e-12)

    def test_joint_additivity(self, spectra, xe_settings):
        params = params_for(0.6, [1e-8, 3e-8])
        parts = [
            joint_log_posterior([s], ModelParams(0.6, 293.0, [d]), xe_settings)
            for s, d in zip(spectra, params.datasets)
        ]
        assert joint_log_posterior(spectra, params, xe_settings) == pytest.approx(sum(parts), rel=1e-12)

    def test_missing_calibration_width(self, xe_settings):
        spectrum = BinnedSpectrum(np.arange(150.0, 301.0, 25.0), np.ones(6), 1.0, metadata={"gas": "Xe"})
        with pytest.raises(ConfigurationError):
            joint_log_posterior([spectrum], params_for(0.6, [1e-8]), xe_settings)

    def test_dataset_count_mismatch(self, spectra, xe_settings):
        with pytest.raises(DomainError):
            joint_log_posterior(spectra, params_for(0.6, [1e-8]), xe_settings)


class TestFitMap:
    def test_truth_is_a_fixed_point(self, xe_settings):
        spectra = spectra_at(xe_settings, 0.6, [1e-8, 3e-8], 100.0)
        best = fit_map(spectra, params_for(0.6, [1e-8, 3e-8]), xe_settings)
        assert best.alpha == pytest.approx(0.6, abs=0.02)
        for dataset, pressure in zip(best.datasets, [1e-8, 3e-8]):
            assert dataset.pressure == pytest.approx(pressure, rel=0.02)
            assert dataset.sigma_q == pytest.approx(60.0, rel=0.02)

    def test_init_outside_bounds(self, xe_settings):
        spectra = spectra_at(xe_settings, 0.6, [1e-8], 10.0)
        with pytest.raises(DomainError):
            fit_map(spectra, params_for(1.5, [1e-8]), xe_settings)

    def test_perturbed_inits_agree(self, xe_settings):
        spectra = spectra_at(xe_settings, 0.6, [1e-8], 20.0, seed=11)
        fits = [
            fit_map(spectra, ModelParams(alpha, 293.0, [DatasetParams(p, 60.0, bg, 0.0)]), xe_settings)
            for alpha, p, bg in [(0.6, 1e-8, 2e4), (0.2, 3e-8, 1e4), (0.9, 3e-9, 4e4)]
        ]
        alphas = [f.alpha for f in fits]
        pressures = [f.datasets[0].pressure for f in fits]
        assert max(alphas) - min(alphas) < 0.02
        assert max(pressures) / min(pressures) < 1.02

    def test_kr_closure(self, kr_settings):
        pressures = [2e-8, 4e-8, 8e-8]
        spectra = spectra_at(kr_settings, 0.55, pressures, 20.0, seed=55)
        best = fit_map(spectra, params_for(0.5, pressures), kr_settings)
        assert abs(best.alpha - 0.55) < 0.15
        for dataset, pressure in zip(best.datasets, pressures):
            assert dataset.pressure == pytest.approx(pressure, rel=0.15)

    def test_fixed_background_mean(self, xe):
        settings = LikelihoodSettings(gas=xe, kernel_method="quadrature", fit_bg_mean=False)
        spectra = spectra_at(settings, 0.6, [1e-8], 10.0, seed=12)
        init = ModelParams(0.6, 293.0, [DatasetParams(1e-8, 60.0, 2e4, 7.0)])
        assert fit_map(spectra, init, settings).datasets[0].bg_mean == 7.0


class TestDiagnostics:
    def test_rhat_of_identical_distributions(self, rng):
        assert split_rhat(rng.standard_normal((8, 2000))) == pytest.approx(1.0, abs=0.01)

    def test_rhat_detects_offsets(self, rng):
        chains = rng.standard_normal((8, 2000)) + np.arange(8)[:, None]
        assert split_rhat(chains) > 1.05

    def test_rhat_of_constant_chains(self):
        assert split_rhat(np.ones((4, 100))) == 1.0

    def test_ess_of_independent_draws(self, rng):
        assert effective_sample_size(rng.standard_normal((8, 2000))) == pytest.approx(16000, rel=0.2)

    def test_ess_of_correlated_draws(self, rng):
        x = np.zeros((4, 5000))
        for t in range(1, 5000):
            x[:, t] = 0.9 * x[:, t - 1] + rng.standard_normal(4)
        assert effective_sample_size(x) < 20000 / 10


class TestSampling:
    def test_gaussian_target(self):
        mean = np.array([1.0, -2.0])
        cov = np.array([[1.0, 0.5], [0.5, 2.0]])
        inverse = np.linalg.inv(cov)

        def log_prob(x):
            d = x - mean
            return -0.5 * d @ inverse @ d

        posterior = sample_posterior(
            log_prob, mean, [-np.inf, -np.inf], [np.inf, np.inf], ["a", "b"],
            n_steps=5000, n_chains=32, seed=1,
        )
        np.testing.assert_allclose(posterior.samples.mean(axis=0), mean, atol=0.05)
        np.testing.assert_allclose(np.cov(posterior.samples.T), cov, rtol=0.1, atol=0.05)
        assert posterior.converged

    def test_truncated_gaussian(self):
        n_steps, n_chains = 4000, 32
        posterior = sample_posterior(
            lambda x: -0.5 * x[0] ** 2, [1.0], [0.5], [np.inf], ["x"],
            n_steps=n_steps, n_chains=n_chains, seed=2,
        )
        x = posterior.column("x")
        assert x.min() >= 0.5
        kept_steps = x.size // n_chains
        thinned = x.reshape(kept_steps, n_chains)[::40].ravel()
        assert kstest(thinned, truncnorm(a=0.5, b=np.inf).cdf).pvalue > 0.01

    def test_too_few_chains(self):
        with pytest.raises(DomainError):
            sample_posterior(lambda x: 0.0, [0.5], [0.0], [1.0], ["x"], n_steps=10, n_chains=3)

    def test_chain_count_raised(self, caplog):
        with caplog.at_level(logging.WARNING):
            posterior = sample_posterior(
                lambda x: 0.0, [0.5, 0.5, 0.5], [0.0] * 3, [1.0] * 3, ["a", "b", "c"],
                n_steps=20, n_chains=4,
            )
        assert posterior.metadata["n_chains"] == 8
        assert "Raising chain count" in caplog.text

    def test_short_run_is_flagged(self):
        posterior = sample_posterior(lambda x: -0.5 * x[0] ** 2, [0.1], [-5.0], [5.0], ["x"], n_steps=20, n_chains=10)
        assert not posterior.converged
        assert posterior.samples.shape[0] > 0

    def test_samples_written(self, tmp_path):
        posterior = Posterior.from_samples(["alpha", "surface_temperature"], np.array([[0.5, 300.0], [0.6, 310.0]]))
        path = posterior.write_csv(tmp_path / "samples.csv")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# schema_version=")
        assert lines[1] == "alpha,surface_temperature,log_prob"
        assert len(lines) == 4

    @pytest.mark.slow
    def test_joint_posterior_at_room_temperature(self, xe_settings):
        pressures = [1e-8, 3e-8]
        spectra = spectra_at(xe_settings, 0.6, pressures, 10.0, seed=21)
        best = fit_map(spectra, params_for(0.6, pressures), xe_settings)
        posterior = run_mcmc(spectra, best, n_steps=3000, n_chains=32, seed=21, settings=xe_settings)
        assert posterior.column("surface_temperature").min() >= 293.0
        summary = summarize(posterior)
        assert 293.0 < summary.ts_upper_limit < 1500.0
        assert summary.alpha.lo <= 0.6 <= summary.alpha.hi or abs(summary.alpha.median - 0.6) < 0.15
        assert posterior.metadata["dataset_ids"] == ["xe-0", "xe-1"]


class TestSummary:
    def test_uniform_alpha_interval(self, rng):
        posterior = Posterior.from_samples(["alpha"], rng.uniform(0, 1, (200_000, 1)))
        summary = summarize(posterior)
        assert summary.alpha.lo == pytest.approx(0.16, abs=0.01)
        assert summary.alpha.hi == pytest.approx(0.84, abs=0.01)
        assert summary.ts_upper_limit is None

    def test_degenerate_samples(self):
        posterior = Posterior.from_samples(["alpha", "surface_temperature"], np.tile([0.7, 293.0], (100, 1)))
        summary = summarize(posterior)
        assert summary.alpha.lo == summary.alpha.median == summary.alpha.hi == 0.7
        assert summary.ts_upper_limit == 293.0

    def test_upper_limit_is_95th_percentile(self, rng):
        ts = 293.0 + np.abs(rng.normal(0, 30, 100_000))
        posterior = Posterior.from_samples(["alpha", "surface_temperature"], np.column_stack([np.full(ts.size, 0.5), ts]))
        assert summarize(posterior).ts_upper_limit == pytest.approx(np.percentile(ts, 95))

    def test_pressures_and_written_summary(self, rng, tmp_path):
        names = ModelParams.names(2)
        samples = np.column_stack([
            rng.uniform(0.4, 0.6, 1000), np.full(1000, 300.0),
            rng.normal(1e-8, 1e-9, 1000), rng.normal(60, 2, 1000), np.full(1000, 2e4), np.zeros(1000),
            rng.normal(3e-8, 2e-9, 1000), rng.normal(61, 2, 1000), np.full(1000, 2e4), np.zeros(1000),
        ])
        posterior = Posterior.from_samples(names, samples, gas="Xe", dataset_ids=["a", "b"])
        estimates = estimate_pressures(posterior)
        assert [e.dataset_id for e in estimates] == ["a", "b"]
        assert estimates[1].median == pytest.approx(3e-8, rel=0.05)
        path = write_summary(summarize(posterior), tmp_path / "fit_summary.json")
        assert '"alpha_med"' in path.read_text()


class TestGaugeComparison:
    @staticmethod
    def estimates(values, error):
        return [PressureEstimate(f"d{i}", v, v - error, v + error) for i, v in enumerate(values)]

    def test_identical_readings(self):
        gauge = [1e-8, 3e-8, 6e-8]
        result = compare_to_gauge(self.estimates(gauge, 1e-9), gauge)
        assert result.slope == pytest.approx(1.0, abs=1e-9)
        assert result.intercept == pytest.approx(0.0, abs=1e-15)

    def test_constant_offset(self, rng):
        truth = np.array([1e-8, 2e-8, 4e-8, 6e-8, 8e-8])
        offset = 5e-9
        measured = truth + rng.normal(0, 5e-10, truth.size)
        result = compare_to_gauge(self.estimates(measured, 5e-10), truth + offset)
        assert abs(result.intercept + offset) < 2 * result.intercept_error
        assert result.slope == pytest.approx(1.0, abs=0.1)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            compare_to_gauge(self.estimates([1e-8, 2e-8], 1e-9), [1e-8])


class TestSensitivity:
    @staticmethod
    def background_spectrum(settings, live_time, pressure=None):
        if pressure is None:
            dataset = DatasetParams(1e-15, 60.0, 2e4, 0.0)
        else:
            dataset = DatasetParams(pressure, 60.0, 2e4, 0.0)
        return simulate_spectrum(settings, 0.6, 293.0, dataset, live_time, metadata={"dataset_id": "bg"})

    def test_floor_drops_with_exposure(self, xe_settings):
        short = background_only_fit(self.background_spectrum(xe_settings, 10.0), settings=xe_settings)
        long = background_only_fit(self.background_spectrum(xe_settings, 20.0), settings=xe_settings)
        assert short.pressure_floor is not None
        assert long.pressure_floor < short.pressure_floor
        assert short.sigma_q == pytest.approx(60.0, rel=0.05)

    def test_injected_signal_rejects_background(self, xe_settings):
        floor = background_only_fit(self.background_spectrum(xe_settings, 10.0), settings=xe_settings).pressure_floor
        injected = self.background_spectrum(xe_settings, 10.0, pressure=10 * floor)
        ratio = signal_likelihood_ratio(injected, settings=xe_settings)
        assert ratio.rejected
        assert ratio.pressure == pytest.approx(10 * floor, rel=0.5)

    def test_pure_background_not_rejected(self, xe_settings):
        ratio = signal_likelihood_ratio(self.background_spectrum(xe_settings, 10.0), settings=xe_settings)
        assert not ratio.rejected

    @pytest.mark.slow
    def test_floor_at_nominal_exposure(self, xe_settings, tmp_path):
        nominal = load_run_config(env="full", overrides={"output_dir": str(tmp_path)})
        # pure-noise window maxima above threshold: most windows, centred on the search-effect bias
        noise = DatasetParams(1e-15, nominal.sigma_q_target, 0.9 / ANALYSIS_RULES["search_window"], 125.0)
        spectrum = simulate_spectrum(
            xe_settings, 0.6, 293.0, noise, nominal.duration, edges=nominal.bin_edges, metadata={"dataset_id": "bg"}
        )
        result = background_only_fit(spectrum, settings=xe_settings)

        assert nominal.duration == pytest.approx(168.0)
        assert result.bg_mean == pytest.approx(125.0, abs=5.0)
        assert result.pressure_floor is not None
        assert 2e-9 / 3 <= result.pressure_floor <= 2e-9 * 3
