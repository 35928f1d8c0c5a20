"""Módulo de espectros de transferência de momento de colisões de gás."""

from src.kinetics.diffuse import (
    DiffuseKernelCache,
    diffuse_density,
    diffuse_density_quadrature,
    get_kernel_cache,
    init_kernel_cache,
    sample_diffuse_collision,
)
from src.kinetics.species import (
    Environment,
    GasSpecies,
    GaussianBackground,
    RateDensity,
    SphereSurface,
    SpectrumParams,
    get_gas,
    load_gas_registry,
)
from src.kinetics.spectrum import expected_counts, smeared_spectrum, unsmeared_density
from src.kinetics.specular import (
    collisional_force_density,
    momentum_scale,
    sample_specular_collision,
    specular_density,
    total_collision_rate,
)
from src.kinetics.units import KEV_C, kevc_to_si, si_to_kevc

__all__ = [
    "KEV_C",
    "DiffuseKernelCache",
    "Environment",
    "GasSpecies",
    "GaussianBackground",
    "RateDensity",
    "SphereSurface",
    "SpectrumParams",
    "collisional_force_density",
    "diffuse_density",
    "diffuse_density_quadrature",
    "expected_counts",
    "get_gas",
    "get_kernel_cache",
    "init_kernel_cache",
    "kevc_to_si",
    "load_gas_registry",
    "momentum_scale",
    "sample_diffuse_collision",
    "sample_specular_collision",
    "si_to_kevc",
    "smeared_spectrum",
    "specular_density",
    "total_collision_rate",
    "unsmeared_density",
]
