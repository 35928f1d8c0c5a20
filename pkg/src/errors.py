"""Hierarquia de exceções compartilhada pelos módulos do gascoll."""

from typing import Any, Dict, List, Optional


class GasCollisionError(Exception):
    """Base class for all gascoll errors."""


class DomainError(GasCollisionError, ValueError):
    """Argument outside the physical or mathematical domain of an operation."""


class ConfigurationError(GasCollisionError, ValueError):
    """Invalid or inconsistent configuration."""


class StatisticalPrecisionError(GasCollisionError):
    """Too few Monte Carlo samples for the requested grid resolution."""


class ResolutionAliasingError(GasCollisionError):
    """Requested evaluation grid is too coarse for resolution smearing."""


class CalibrationError(GasCollisionError):
    """Noise-floor calibration did not converge."""

    def __init__(self, message: str, history: Optional[List[Dict[str, float]]] = None):
        super().__init__(message)
        self.history = history or []


class InsufficientStatisticsError(GasCollisionError):
    """Too few inputs for a stable estimate."""


class AlignmentError(GasCollisionError):
    """Two series that must be aligned window by window are not."""


class DetectorResponseError(GasCollisionError):
    """A scheduled calibration pulse was not reconstructed."""


class BinningError(GasCollisionError, ValueError):
    """Invalid histogram bin edges."""


class LikelihoodDomainError(GasCollisionError):
    """Likelihood evaluated where the expectation is not positive."""


class FitConvergenceError(GasCollisionError):
    """Optimizer failed to converge."""

    def __init__(self, message: str, state: Any = None, gradient_norm: Optional[float] = None):
        super().__init__(message)
        self.state = state
        self.gradient_norm = gradient_norm


class SchemaVersionError(GasCollisionError):
    """File written with an unsupported schema major version."""


class StageError(GasCollisionError):
    """A pipeline stage failed; partial artifacts are kept for inspection."""

    def __init__(self, stage: str, message: str, artifacts: Optional[Dict[str, Any]] = None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.artifacts = artifacts or {}
