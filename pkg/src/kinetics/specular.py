"""Specular collision channel, total rates and the shared incoming-flux sampler."""

from typing import Optional, Tuple

import numpy as np
from scipy.special import erfc

from src.errors import DomainError
from src.kinetics.species import Environment, GasSpecies, SphereSurface
from src.kinetics.units import KEV_C, K_B, MBAR


def momentum_scale(gas: GasSpecies, env: Environment) -> float:
    """sqrt(8 m_g k_B T_g) in keV/c."""
    return float(np.sqrt(8.0 * gas.mass_kg * K_B * env.gas_temperature) / KEV_C)


def total_collision_rate(gas: GasSpecies, env: Environment, sphere: SphereSurface) -> float:
    """Kinetic collision rate pi R^2 n v_mean on the whole sphere, s^-1."""
    number_density = env.pressure * MBAR / (K_B * env.gas_temperature)
    mean_speed = np.sqrt(8.0 * K_B * env.gas_temperature / (np.pi * gas.mass_kg))
    return float(np.pi * sphere.radius ** 2 * number_density * mean_speed)


def specular_density(q_abs, gas: GasSpecies, env: Environment, sphere: SphereSurface):
    """
    Specular part of dGamma/d|q_z| in s^-1 (keV/c)^-1.

    Args:
        q_abs: |q_z| in keV/c, scalar or array.

    Raises:
        DomainError: If any q_abs is negative.
    """
    q = np.asarray(q_abs, dtype=float)
    if np.any(q < 0):
        raise DomainError("specular_density requires q_abs >= 0")

    mkT = gas.mass_kg * K_B * env.gas_temperature
    prefactor = (1.0 - sphere.accommodation) * np.pi * sphere.radius ** 2 * env.pressure * MBAR / mkT
    density = prefactor * erfc(q * KEV_C / np.sqrt(8.0 * mkT)) * KEV_C
    return float(density) if density.ndim == 0 else density


def sample_incoming(
    gas: GasSpecies,
    env: Environment,
    rng: np.random.Generator,
    size: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw collision sites and incident velocities for an isotropic gas.

    Outward normals are uniform on the sphere. The inward normal speed follows the
    flux-weighted Maxwell-Boltzmann law (Rayleigh with scale sqrt(kT/m)), tangential
    components are Gaussian.

    Returns:
        (normals, velocities), both of shape (size, 3); velocities in m/s.
    """
    sigma = np.sqrt(K_B * env.gas_temperature / gas.mass_kg)
    normals = _uniform_normals(rng, size)
    normal_speed = sigma * rng.rayleigh(1.0, size)
    t1, t2 = tangent_basis(normals)
    tangential = sigma * rng.standard_normal((size, 2))
    velocities = (
        -normal_speed[:, None] * normals
        + tangential[:, :1] * t1
        + tangential[:, 1:] * t2
    )
    return normals, velocities


def sample_specular_collision(
    gas: GasSpecies,
    env: Environment,
    sphere: SphereSurface,
    rng: np.random.Generator,
    size: Optional[int] = None,
    return_normals: bool = False,
):
    """
    Sample mirror-reflection momentum transfers q = 2 m (v_in . n) n in keV/c.

    Args:
        size: Number of collisions. None returns a single 3-vector.
        return_normals: Also return the sampled outward surface normals.
    """
    n = 1 if size is None else int(size)
    normals, v_in = sample_incoming(gas, env, rng, n)
    v_normal = np.einsum("ij,ij->i", v_in, normals)
    q = 2.0 * gas.mass_kg * v_normal[:, None] * normals / KEV_C

    if size is None:
        q, normals = q[0], normals[0]
    return (q, normals) if return_normals else q


def collisional_force_density(gas: GasSpecies, env: Environment, sphere: SphereSurface) -> float:
    """
    One-sided white force-noise amplitude from gas collisions, N/sqrt(Hz).

    Assumes the surface is at the gas temperature; uses <q_z^2> = 8mkT/3 for
    specular and (8 + pi) mkT/3 for diffuse collisions.
    """
    mkT = gas.mass_kg * K_B * env.gas_temperature
    mean_qz2 = (1.0 - sphere.accommodation) * 8.0 * mkT / 3.0
    mean_qz2 += sphere.accommodation * (8.0 + np.pi) * mkT / 3.0
    return float(np.sqrt(2.0 * total_collision_rate(gas, env, sphere) * mean_qz2))


def _uniform_normals(rng: np.random.Generator, size: int) -> np.ndarray:
    v = rng.standard_normal((size, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def tangent_basis(normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangent vectors (t1, t2) for each unit normal."""
    reference = np.zeros_like(normals)
    use_y = np.abs(normals[:, 0]) > 0.9
    reference[~use_y, 0] = 1.0
    reference[use_y, 1] = 1.0
    t1 = np.cross(normals, reference)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    return t1, t2
