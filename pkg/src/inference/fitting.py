"""Maximum a-posteriori fits of the joint model."""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import approx_fprime, minimize

from src.config import INFERENCE_DEFAULTS
from src.errors import DomainError, FitConvergenceError
from src.inference.likelihood import JointModel, LikelihoodSettings, ModelParams
from src.recon.binning import BinnedSpectrum

logger = logging.getLogger(__name__)

# stands in for -log(0) so line searches stay finite
PENALTY = 1e30


def parameter_scales(x0: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Typical magnitude of each parameter, used to bring the problem to order unity."""
    scale = np.abs(np.asarray(x0, dtype=float))
    span = np.where(np.isfinite(upper - lower), upper - lower, 1.0)
    fallback = np.where(span > 0, 0.1 * span, 1.0)
    return np.where(scale > 0, scale, fallback)


def minimize_scaled(
    objective,
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    max_iterations: int = INFERENCE_DEFAULTS["map_max_iterations"],
):
    """
    Minimize ``objective`` over a box, working in units of the parameter scales.

    L-BFGS-B is tried first; Powell takes over when it reports failure.

    Returns:
        (x, fun, success, message, method)
    """
    x0 = np.asarray(x0, dtype=float)
    scale = parameter_scales(x0, lower, upper)
    # open lower bounds at zero are kept slightly inside
    lo = np.where(lower == 0, 1e-9 * scale, lower) / scale
    hi = upper / scale
    bounds = list(zip(lo, hi))

    def scaled(u):
        value = objective(u * scale)
        return value if np.isfinite(value) else PENALTY

    u0 = np.clip(x0 / scale, lo, hi)
    result = minimize(scaled, u0, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iterations})
    method = "L-BFGS-B"
    if not result.success or result.fun >= PENALTY:
        logger.info(f"L-BFGS-B did not converge ({result.message}); retrying with Powell")
        start = result.x if result.fun < PENALTY else u0
        result = minimize(
            scaled, start, method="Powell", bounds=bounds,
            options={"maxiter": max_iterations, "xtol": 1e-6, "ftol": 1e-10},
        )
        method = "Powell"
    return result.x * scale, float(result.fun), bool(result.success and result.fun < PENALTY), str(result.message), method


def fit_map(
    spectra: Sequence[BinnedSpectrum],
    init: ModelParams,
    settings: Optional[LikelihoodSettings] = None,
    sigma_q_centres: Optional[Sequence[float]] = None,
    max_iterations: int = INFERENCE_DEFAULTS["map_max_iterations"],
) -> ModelParams:
    """
    Bounded maximization of the joint log-posterior.

    Args:
        init: Starting point; must lie inside the parameter bounds.

    Raises:
        DomainError: If ``init`` is outside the bounds.
        FitConvergenceError: If neither optimizer converges.
    """
    model = JointModel(spectra, settings, sigma_q_centres, reference=init)
    if not model.in_bounds(init):
        raise DomainError("Initial parameters lie outside the prior bounds")

    x0 = model.pack(init)
    x, fun, success, message, method = minimize_scaled(
        lambda v: -model(v), x0, model.lower, model.upper, max_iterations
    )
    best = model.unpack(x)
    if not success:
        gradient = approx_fprime(x, lambda v: -model(v), 1e-8 * parameter_scales(x, model.lower, model.upper))
        raise FitConvergenceError(
            f"MAP fit did not converge with {method}: {message}",
            state=best,
            gradient_norm=float(np.linalg.norm(gradient)),
        )
    logger.info(
        f"MAP fit ({method}) of {model.n_datasets} datasets: alpha={best.alpha:.3f}, "
        f"T_s={best.surface_temperature:.0f} K, log-posterior={-fun:.2f}"
    )
    return best
