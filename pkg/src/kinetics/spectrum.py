"""Total |q_z| spectrum, Gaussian resolution smearing and expected bin counts."""

from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import fftconvolve
from scipy.stats import norm

from src.config import ANALYSIS_RULES, KINETICS_DEFAULTS
from src.errors import BinningError, DomainError, ResolutionAliasingError
from src.kinetics.diffuse import DiffuseKernelCache, get_kernel_cache, internal_grid
from src.kinetics.species import GaussianBackground, RateDensity, SpectrumParams
from src.kinetics.specular import specular_density, total_collision_rate


def unsmeared_density(
    params: SpectrumParams,
    kernel_method: str = "mc",
    cache: Optional[DiffuseKernelCache] = None,
) -> RateDensity:
    """Specular + diffuse dGamma/d|q_z| on the internal grid."""
    grid = internal_grid()
    env, sphere = params.environment, params.sphere
    density = specular_density(grid, params.gas, env, sphere)

    diffuse_rate = params.alpha * total_collision_rate(params.gas, env, sphere)
    if diffuse_rate > 0:
        cache = cache or get_kernel_cache()
        kernel = cache.interpolated(
            params.gas, params.gas_temperature, params.surface_temperature, method=kernel_method
        )
        density = density + diffuse_rate * kernel

    return RateDensity(grid, density)


def gaussian_smear(grid: np.ndarray, density: np.ndarray, sigma_q: float) -> np.ndarray:
    """
    Smear a |q_z| density with a zero-mean Gaussian on the signed axis.

    The density is split evenly over both signs, convolved and folded back, which
    conserves the trapezoid integral over the grid.
    """
    if not sigma_q > 0:
        raise DomainError(f"sigma_q must be positive, got {sigma_q}")
    step = grid[1] - grid[0]
    signed = 0.5 * np.concatenate([density[:0:-1], density])

    half_width = int(np.ceil(KINETICS_DEFAULTS["smearing_truncation"] * sigma_q / step))
    x = np.arange(-half_width, half_width + 1) * step
    kernel = np.exp(-0.5 * (x / sigma_q) ** 2)
    kernel /= kernel.sum()

    smeared = np.clip(fftconvolve(signed, kernel, mode="same"), 0.0, None)
    mid = smeared.size // 2
    return smeared[mid:] + smeared[mid::-1]


def smeared_spectrum(
    params: SpectrumParams,
    grid: Sequence[float],
    kernel_method: str = "mc",
    cache: Optional[DiffuseKernelCache] = None,
) -> RateDensity:
    """
    Resolution-smeared dGamma/d|q_z| evaluated on ``grid`` (keV/c).

    Raises:
        ResolutionAliasingError: If ``grid`` is coarser than 5 keV/c.
    """
    q = np.asarray(grid, dtype=float)
    if q.size > 1 and np.max(np.diff(q)) > KINETICS_DEFAULTS["max_requested_step"]:
        raise ResolutionAliasingError(
            f"Grid spacing {np.max(np.diff(q)):.2f} keV/c exceeds "
            f"{KINETICS_DEFAULTS['max_requested_step']} keV/c"
        )
    base = unsmeared_density(params, kernel_method, cache)
    smeared = gaussian_smear(base.grid, base.density, params.sigma_q)
    return RateDensity(q, np.interp(q, base.grid, smeared, right=0.0))


def background_counts(background: GaussianBackground, bin_edges: np.ndarray, live_time: float) -> np.ndarray:
    """Expected counts per bin of a Gaussian background component."""
    edges = np.asarray(bin_edges, dtype=float)
    cdf = norm.cdf(edges, loc=background.mean, scale=background.width)
    sf = norm.sf(edges, loc=background.mean, scale=background.width)
    # upper-tail bins from the survival function, which keeps them above zero
    fraction = np.where(edges[:-1] >= background.mean, sf[:-1] - sf[1:], np.diff(cdf))
    return background.rate * live_time * fraction


def validate_edges(bin_edges: Sequence[float], threshold: Optional[float] = None) -> np.ndarray:
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise BinningError("At least two bin edges are required")
    if np.any(np.diff(edges) <= 0):
        raise BinningError("Bin edges must be strictly ascending")
    if threshold is not None and edges[0] < threshold - 1e-9:
        raise BinningError(f"First bin edge {edges[0]} lies below the analysis threshold {threshold}")
    return edges


def expected_counts(
    params: SpectrumParams,
    bin_edges: Sequence[float],
    live_time: float,
    background: Optional[GaussianBackground] = None,
    kernel_method: str = "mc",
    cache: Optional[DiffuseKernelCache] = None,
    threshold: Optional[float] = None,
) -> np.ndarray:
    """
    Expected counts per bin: integrated smeared signal times live time plus background.

    Args:
        bin_edges: Ascending edges in keV/c; the first edge must not lie below threshold.
        live_time: Exposure in s.
        threshold: Analysis threshold in keV/c. Defaults to ANALYSIS_RULES["threshold"].
    """
    threshold = ANALYSIS_RULES["threshold"] if threshold is None else threshold
    edges = validate_edges(bin_edges, threshold)
    if live_time < 0:
        raise DomainError(f"Live time must be >= 0, got {live_time}")

    base = unsmeared_density(params, kernel_method, cache)
    smeared = gaussian_smear(base.grid, base.density, params.sigma_q)
    cumulative = cumulative_trapezoid(smeared, base.grid, initial=0.0)
    counts = np.diff(np.interp(edges, base.grid, cumulative)) * live_time

    if background is not None:
        counts = counts + background_counts(background, edges, live_time)
    return counts
