"""Diffuse collision channel: Monte Carlo sampler, quadrature evaluation and kernel cache."""

import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import fftconvolve
from scipy.special import erfc

from src.config import KERNEL_CACHE_DIR, KINETICS_DEFAULTS, SCHEMA_VERSION
from src.errors import DomainError, StatisticalPrecisionError
from src.kinetics.species import Environment, GasSpecies, RateDensity, SphereSurface
from src.kinetics.specular import (
    momentum_scale,
    sample_incoming,
    tangent_basis,
    total_collision_rate,
)
from src.kinetics.units import KEV_C, K_B

logger = logging.getLogger(__name__)

KERNEL_METHODS = ("mc", "quadrature")
QUADRATURE_NODES = 96


def sample_diffuse_collision(
    gas: GasSpecies,
    env: Environment,
    sphere: SphereSurface,
    rng: np.random.Generator,
    size: Optional[int] = None,
):
    """
    Sample thermalize-and-re-emit momentum transfers q = m (v_in - v_out) in keV/c.

    The outgoing leg is a flux-weighted Maxwellian at the surface temperature about
    the outward normal (cosine-law direction), independent of the arrival.
    """
    n = 1 if size is None else int(size)
    normals, v_in = sample_incoming(gas, env, rng, n)

    sigma_s = np.sqrt(K_B * sphere.surface_temperature / gas.mass_kg)
    normal_speed = sigma_s * rng.rayleigh(1.0, n)
    tangential = sigma_s * rng.standard_normal((n, 2))
    t1, t2 = tangent_basis(normals)
    v_out = normal_speed[:, None] * normals + tangential[:, :1] * t1 + tangential[:, 1:] * t2

    q = gas.mass_kg * (v_in - v_out) / KEV_C
    return q[0] if size is None else q


def internal_grid(step: Optional[float] = None, q_max: Optional[float] = None) -> np.ndarray:
    """Unsigned internal |q_z| grid in keV/c."""
    step = step or KINETICS_DEFAULTS["grid_step"]
    q_max = q_max or KINETICS_DEFAULTS["grid_max"]
    n = int(round(q_max / step))
    return np.arange(n + 1) * step


def _fold(signed: np.ndarray) -> np.ndarray:
    """Fold a symmetric signed-grid density onto |q|."""
    mid = signed.size // 2
    return signed[mid:] + signed[mid::-1]


def _leg_density(x: np.ndarray, c: float, sigma: float) -> np.ndarray:
    """Density of c * Rayleigh(sigma) + Normal(0, (1 - c^2) sigma^2)."""
    s = np.sqrt(1.0 - c * c)
    tau = sigma * s
    mu = x * c
    bracket = tau ** 2 * np.exp(-mu ** 2 / (2 * tau ** 2))
    bracket += mu * tau * np.sqrt(np.pi / 2) * erfc(-mu / (tau * np.sqrt(2)))
    return np.exp(-x ** 2 / (2 * sigma ** 2)) * bracket / (sigma ** 3 * s * np.sqrt(2 * np.pi))


def unit_kernel_quadrature(
    mass_kg: float,
    gas_temperature: float,
    surface_temperature: float,
    grid: np.ndarray,
    nodes: int = QUADRATURE_NODES,
) -> np.ndarray:
    """Unit-normalized diffuse |q_z| density per keV/c by Gauss-Legendre quadrature."""
    step = grid[1] - grid[0]
    signed_q = np.concatenate([-grid[:0:-1], grid])
    velocity = signed_q * KEV_C / mass_kg
    dv = step * KEV_C / mass_kg

    sigma_g = np.sqrt(K_B * gas_temperature / mass_kg)
    sigma_s = np.sqrt(K_B * surface_temperature / mass_kg)

    cosines, weights = np.polynomial.legendre.leggauss(nodes)
    signed = np.zeros_like(signed_q)
    for c, w in zip(cosines, weights):
        leg = _leg_density(velocity, c, sigma_g)
        if sigma_s > 0:
            leg = fftconvolve(leg, _leg_density(velocity, c, sigma_s), mode="same") * dv
        signed += 0.5 * w * leg

    # density per m/s -> per keV/c
    signed = np.clip(signed, 0.0, None) * dv / step
    return _fold(signed)


def unit_kernel_mc(
    gas: GasSpecies,
    gas_temperature: float,
    surface_temperature: float,
    grid: np.ndarray,
    samples: int,
    seed: int,
    smoothing: float,
) -> np.ndarray:
    """Unit-normalized diffuse |q_z| density per keV/c from a smoothed MC histogram."""
    step = grid[1] - grid[0]
    rng = np.random.default_rng(seed)
    env = Environment(pressure=0.0, gas_temperature=gas_temperature)
    sphere = SphereSurface(surface_temperature=surface_temperature, accommodation=1.0)

    counts = np.zeros(2 * grid.size - 1)
    edges = np.concatenate([-grid[:0:-1], grid]) - 0.5 * step
    edges = np.append(edges, edges[-1] + step)
    chunk = 250_000
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        qz = sample_diffuse_collision(gas, env, sphere, rng, size=n)[:, 2]
        counts += np.histogram(qz, bins=edges)[0]
        done += n

    signed = counts / (samples * step)
    if smoothing > 0:
        signed = gaussian_filter1d(signed, smoothing / step, mode="constant", truncate=6.0)
    return _fold(signed)


class DiffuseKernelCache:
    """
    Thread-safe cache of unit-normalized diffuse kernels.

    Kernels live in memory and on disk as ``<sha256>.npz`` with a JSON metadata
    sidecar. Disk writes go to a temporary file and are moved into place.
    """

    def __init__(self, directory: Optional[Path] = None, persist: bool = True):
        self.directory = Path(directory) if directory else KERNEL_CACHE_DIR
        self.persist = persist
        self._memory: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.persist:
            self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key_fields(
        gas: GasSpecies,
        gas_temperature: float,
        surface_temperature: float,
        grid_step: float,
        grid_max: float,
        samples: int,
        seed: int,
        smoothing: float,
        method: str,
    ) -> Dict:
        fields = {
            "gas": gas.name,
            "mass_u": gas.mass,
            "gas_temperature": round(float(gas_temperature), 6),
            "surface_temperature": round(float(surface_temperature), 6),
            "grid_step": float(grid_step),
            "grid_max": float(grid_max),
            "method": method,
        }
        if method == "mc":
            fields.update({"samples": int(samples), "seed": int(seed), "smoothing": float(smoothing)})
        return fields

    @staticmethod
    def _hash(fields: Dict) -> str:
        return hashlib.sha256(json.dumps(fields, sort_keys=True).encode()).hexdigest()

    def kernel(
        self,
        gas: GasSpecies,
        gas_temperature: float,
        surface_temperature: float,
        samples: Optional[int] = None,
        seed: Optional[int] = None,
        method: str = "mc",
        smoothing: Optional[float] = None,
    ) -> np.ndarray:
        """Unit kernel on the internal grid for one (gas, T_g, T_s) point."""
        if method not in KERNEL_METHODS:
            raise DomainError(f"Unknown kernel method '{method}'")
        samples = samples or KINETICS_DEFAULTS["kernel_samples"]
        seed = KINETICS_DEFAULTS["kernel_seed"] if seed is None else seed
        smoothing = KINETICS_DEFAULTS["kernel_smoothing"] if smoothing is None else smoothing
        grid = internal_grid()

        fields = self.key_fields(
            gas, gas_temperature, surface_temperature, grid[1] - grid[0], grid[-1],
            samples, seed, smoothing, method,
        )
        key = self._hash(fields)

        cached = self._memory.get(key)
        if cached is not None:
            return cached

        with self._lock:
            cached = self._memory.get(key)
            if cached is not None:
                return cached

            kernel = self._load(key) if self.persist else None
            if kernel is None:
                logger.debug(f"Computing {method} kernel for {gas.name} T_s={surface_temperature:.1f} K")
                if method == "mc":
                    check_sample_count(gas, Environment(gas_temperature=gas_temperature), samples, grid[1] - grid[0])
                    kernel = unit_kernel_mc(gas, gas_temperature, surface_temperature, grid, samples, seed, smoothing)
                else:
                    kernel = unit_kernel_quadrature(gas.mass_kg, gas_temperature, surface_temperature, grid)
                if self.persist:
                    self._store(key, kernel, fields)

            kernel.setflags(write=False)
            self._memory[key] = kernel
            return kernel

    def interpolated(
        self,
        gas: GasSpecies,
        gas_temperature: float,
        surface_temperature: float,
        method: str = "mc",
        samples: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> np.ndarray:
        """Kernel at any T_s by linear interpolation between ladder nodes."""
        step = KINETICS_DEFAULTS["ts_node_step"]
        ts = float(np.clip(surface_temperature, 0.0, KINETICS_DEFAULTS["ts_max"]))
        lower = np.floor(ts / step) * step
        weight = (ts - lower) / step
        low_kernel = self.kernel(gas, gas_temperature, lower, samples, seed, method)
        if weight < 1e-12:
            return low_kernel
        high_kernel = self.kernel(gas, gas_temperature, lower + step, samples, seed, method)
        return (1.0 - weight) * low_kernel + weight * high_kernel

    def clear(self):
        with self._lock:
            self._memory.clear()

    def __len__(self) -> int:
        return len(self._memory)

    def _load(self, key: str) -> Optional[np.ndarray]:
        path = self.directory / f"{key}.npz"
        if not path.exists():
            return None
        with np.load(path) as data:
            return np.array(data["kernel"])

    def _store(self, key: str, kernel: np.ndarray, fields: Dict):
        path = self.directory / f"{key}.npz"
        tmp = self.directory / f".{key}.{os.getpid()}.{threading.get_ident()}.tmp.npz"
        np.savez(tmp, kernel=kernel)
        os.replace(tmp, path)

        meta = dict(fields, schema_version=SCHEMA_VERSION, key=key, points=int(kernel.size))
        meta_tmp = self.directory / f".{key}.{os.getpid()}.tmp.json"
        with open(meta_tmp, "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
        os.replace(meta_tmp, self.directory / f"{key}.json")


_kernel_cache: Optional[DiffuseKernelCache] = None


def get_kernel_cache() -> DiffuseKernelCache:
    """Get the process-wide kernel cache, creating it on first use."""
    global _kernel_cache
    if _kernel_cache is None:
        _kernel_cache = DiffuseKernelCache()
    return _kernel_cache


def init_kernel_cache(directory: Optional[Path] = None, persist: bool = True) -> DiffuseKernelCache:
    """Replace the process-wide kernel cache."""
    global _kernel_cache
    _kernel_cache = DiffuseKernelCache(directory=directory, persist=persist)
    return _kernel_cache


def check_sample_count(gas: GasSpecies, env: Environment, samples: int, step: float):
    """Raise if the sample count cannot resolve the grid step."""
    minimum = max(KINETICS_DEFAULTS["kernel_min_samples"], 100.0 * momentum_scale(gas, env) / step)
    if samples < minimum:
        raise StatisticalPrecisionError(
            f"{samples} samples are too few for a {step} keV/c grid (need >= {int(minimum)})"
        )


def _evaluate(unit_kernel: np.ndarray, grid, scale: float) -> RateDensity:
    q = np.asarray(grid, dtype=float)
    if np.any(q < 0):
        raise DomainError("Rate-density grids are |q_z| values and must be >= 0")
    density = scale * np.interp(q, internal_grid(), unit_kernel, right=0.0)
    return RateDensity(q, density)


def diffuse_density(
    grid,
    gas: GasSpecies,
    env: Environment,
    sphere: SphereSurface,
    mc_samples: Optional[int] = None,
    seed: Optional[int] = None,
    cache: Optional[DiffuseKernelCache] = None,
) -> RateDensity:
    """
    Diffuse part of dGamma/d|q_z| (scaled by alpha) from the cached MC kernel.

    Raises:
        StatisticalPrecisionError: If mc_samples cannot resolve the grid.
    """
    mc_samples = mc_samples or KINETICS_DEFAULTS["kernel_samples"]
    q = np.asarray(grid, dtype=float)
    step = float(np.min(np.diff(q))) if q.size > 1 else KINETICS_DEFAULTS["grid_step"]
    check_sample_count(gas, env, mc_samples, min(step, KINETICS_DEFAULTS["grid_step"]))

    scale = sphere.accommodation * total_collision_rate(gas, env, sphere)
    if scale == 0.0:
        return RateDensity(q, np.zeros_like(q))
    cache = cache or get_kernel_cache()
    kernel = cache.kernel(gas, env.gas_temperature, sphere.surface_temperature, mc_samples, seed, "mc")
    return _evaluate(kernel, q, scale)


def diffuse_density_quadrature(
    grid,
    gas: GasSpecies,
    env: Environment,
    sphere: SphereSurface,
    cache: Optional[DiffuseKernelCache] = None,
) -> RateDensity:
    """Diffuse part of dGamma/d|q_z| by deterministic quadrature of the sampling law."""
    q = np.asarray(grid, dtype=float)
    scale = sphere.accommodation * total_collision_rate(gas, env, sphere)
    if scale == 0.0:
        return RateDensity(q, np.zeros_like(q))
    cache = cache or get_kernel_cache()
    kernel = cache.kernel(gas, env.gas_temperature, sphere.surface_temperature, method="quadrature")
    return _evaluate(kernel, q, scale)

