"""Credible intervals, upper limits and pressure-vs-gauge comparison."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from jsonschema import validate

from src.config import SCHEMA_VERSION, SCHEMAS_DIR
from src.errors import DomainError, InsufficientStatisticsError
from src.inference.sampling import Posterior

logger = logging.getLogger(__name__)

CENTRAL_PERCENTILES = (16.0, 50.0, 84.0)
UPPER_LIMIT_PERCENTILE = 95.0


@dataclass(frozen=True)
class Interval:
    lo: float
    median: float
    hi: float

    @classmethod
    def central(cls, values: np.ndarray) -> "Interval":
        lo, med, hi = np.percentile(values, CENTRAL_PERCENTILES)
        return cls(float(lo), float(med), float(hi))

    @property
    def error(self) -> float:
        return 0.5 * (self.hi - self.lo)


@dataclass(frozen=True)
class PressureEstimate:
    """Marginal pressure posterior of one dataset (mbar)."""

    dataset_id: str
    median: float
    lo: float
    hi: float

    @property
    def error(self) -> float:
        return 0.5 * (self.hi - self.lo)


@dataclass
class PosteriorSummary:
    gas: str
    alpha: Interval
    ts_upper_limit: Optional[float]
    pressures: List[PressureEstimate]
    sigma_q: List[Interval]
    converged: bool = True
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "gas": self.gas,
            "alpha_lo": self.alpha.lo,
            "alpha_med": self.alpha.median,
            "alpha_hi": self.alpha.hi,
            "ts_ul_95": self.ts_upper_limit,
            "converged": self.converged,
            "datasets": [
                {
                    "dataset_id": p.dataset_id,
                    "pressure_med": p.median,
                    "pressure_lo": p.lo,
                    "pressure_hi": p.hi,
                    "sigma_q_med": s.median,
                    "sigma_q_lo": s.lo,
                    "sigma_q_hi": s.hi,
                }
                for p, s in zip(self.pressures, self.sigma_q)
            ],
            "diagnostics": self.diagnostics,
        }


def _dataset_ids(posterior: Posterior, n: int) -> List[str]:
    ids = list(posterior.metadata.get("dataset_ids", []))
    return ids if len(ids) == n else [f"dataset_{i}" for i in range(n)]


def _dataset_count(posterior: Posterior) -> int:
    return sum(1 for name in posterior.names if name.startswith("pressure_"))


def estimate_pressures(posterior: Posterior) -> List[PressureEstimate]:
    """Median and central 68% of each dataset's marginal pressure posterior."""
    n = _dataset_count(posterior)
    estimates = []
    for i, dataset_id in enumerate(_dataset_ids(posterior, n)):
        interval = Interval.central(posterior.column(f"pressure_{i}"))
        estimates.append(PressureEstimate(dataset_id, interval.median, interval.lo, interval.hi))
    return estimates


def summarize(posterior: Posterior) -> PosteriorSummary:
    """
    Central 68% interval on alpha, one-sided 95% upper limit on T_s, pressures and resolutions.

    T_s is reported as a limit because its prior is bounded below at room temperature.
    """
    n = _dataset_count(posterior)
    ts_limit = None
    if "surface_temperature" in posterior.names:
        ts_limit = float(np.percentile(posterior.column("surface_temperature"), UPPER_LIMIT_PERCENTILE))
    sigma_q = [Interval.central(posterior.column(f"sigma_q_{i}")) for i in range(n)]
    if not posterior.converged:
        logger.warning("Summarizing a posterior that failed its convergence diagnostics")
    return PosteriorSummary(
        gas=str(posterior.metadata.get("gas", "")),
        alpha=Interval.central(posterior.column("alpha")),
        ts_upper_limit=ts_limit,
        pressures=estimate_pressures(posterior),
        sigma_q=sigma_q,
        converged=posterior.converged,
        diagnostics=posterior.diagnostics(),
    )


def write_summary(summary: PosteriorSummary, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = summary.to_dict()
    with open(SCHEMAS_DIR / "fit_summary_schema.json", "r", encoding="utf-8") as f:
        validate(instance=data, schema=json.load(f))
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
    return path


@dataclass(frozen=True)
class GaugeComparison:
    """Straight line estimate = slope * gauge + intercept; the intercept is the gauge zero offset."""

    slope: float
    intercept: float
    slope_error: float
    intercept_error: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def compare_to_gauge(
    estimates: Sequence[PressureEstimate],
    gauge_readings: Sequence[float],
) -> GaugeComparison:
    """
    Weighted straight-line fit of fitted pressures against gauge readings.

    Raises:
        DomainError: If the two lists differ in length.
        InsufficientStatisticsError: With fewer than two datasets.
    """
    gauge = np.asarray(gauge_readings, dtype=float)
    if len(estimates) != gauge.size:
        raise DomainError(f"{len(estimates)} pressure estimates for {gauge.size} gauge readings")
    if gauge.size < 2:
        raise InsufficientStatisticsError("A gauge comparison needs at least two datasets")

    values = np.array([e.median for e in estimates])
    errors = np.array([e.error for e in estimates])
    weighted = np.all(errors > 0)
    weights = 1.0 / errors if weighted else None
    popt, pcov = np.polyfit(gauge, values, 1, w=weights, cov="unscaled")
    perr = np.sqrt(np.clip(np.diag(pcov), 0.0, None))
    comparison = GaugeComparison(float(popt[0]), float(popt[1]), float(perr[0]), float(perr[1]))
    logger.info(
        f"Pressure vs gauge: slope {comparison.slope:.3f} +- {comparison.slope_error:.3f}, "
        f"intercept {comparison.intercept:.2e} mbar"
    )
    return comparison
