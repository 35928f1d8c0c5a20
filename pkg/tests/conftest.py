"""Shared fixtures for the gascoll test-suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.kinetics import Environment, SphereSurface, get_gas, init_kernel_cache  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow closure tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session", autouse=True)
def kernel_cache(tmp_path_factory):
    """Isolated on-disk kernel cache for the whole session."""
    return init_kernel_cache(tmp_path_factory.mktemp("kernels"), persist=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def xe():
    return get_gas("Xe")


@pytest.fixture
def kr():
    return get_gas("Kr")


@pytest.fixture
def sf6():
    return get_gas("SF6")


@pytest.fixture
def env_1e7():
    return Environment(pressure=1e-7, gas_temperature=293.0)


@pytest.fixture
def sphere_specular():
    return SphereSurface(radius=50e-9, surface_temperature=293.0, accommodation=0.0)


@pytest.fixture(scope="session")
def osc():
    from src.dynsim import OscillatorConfig

    return OscillatorConfig()


@pytest.fixture(scope="session")
def noise():
    from src.dynsim import default_noise_config

    return default_noise_config()


@pytest.fixture(scope="session")
def calibration_run(osc, noise):
    """200 reconstructed 1040 keV/c calibration pulses."""
    from src.dynsim.calibration import simulate_calibration_run

    return simulate_calibration_run(osc, noise, [1040.0], 200, np.random.default_rng(1040))


@pytest.fixture(scope="session")
def detector_calibration(calibration_run, osc):
    from src.recon import calibrate_detector

    return calibrate_detector(calibration_run, osc)
