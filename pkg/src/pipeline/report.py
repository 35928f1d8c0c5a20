"""Run report: provenance, per-dataset results, fit summary and sensitivity."""

import json
import logging
import platform
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from jsonschema import validate

from src import __version__
from src.config import SCHEMA_VERSION, SCHEMAS_DIR
from src.inference.likelihood import ModelParams
from src.inference.sensitivity import BackgroundFit
from src.inference.summary import GaugeComparison, PosteriorSummary
from src.provenance.logger import hash_payload, json_default
from src.recon.binning import BinnedSpectrum

logger = logging.getLogger(__name__)


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version(), "gascoll": __version__}
    for package in ("numpy", "scipy", "emcee", "jsonschema", "PyYAML"):
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = "unknown"
    return versions


@dataclass
class StageRecord:
    stage: str
    dataset_id: str
    status: str
    output_hash: Optional[str] = None
    duration: Optional[float] = None

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        data = {
            "stage": self.stage,
            "dataset_id": self.dataset_id,
            "status": self.status,
            "output_hash": self.output_hash,
        }
        if include_timings:
            data["duration_s"] = self.duration
        return data


@dataclass
class DatasetRecord:
    """One simulated dataset after reconstruction."""

    dataset_id: str
    pressure: float
    gauge_pressure: Optional[float]
    spectrum: BinnedSpectrum
    n_collisions: int
    cut_stats: Dict[str, Any] = field(default_factory=dict)
    excluded: bool = False
    exclusion_reason: Optional[str] = None
    background: bool = False
    paths: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def fitted(self) -> bool:
        return not (self.excluded or self.background)

    def to_dict(self) -> Dict[str, Any]:
        cuts = self.spectrum.metadata.get("cuts", {})
        return {
            "dataset_id": self.dataset_id,
            "pressure": self.pressure,
            "gauge_pressure": self.gauge_pressure,
            "background": self.background,
            "excluded": self.excluded,
            "exclusion_reason": self.exclusion_reason,
            "n_collisions": self.n_collisions,
            "live_time": self.spectrum.live_time,
            "raw_time": self.spectrum.raw_time,
            "total_counts": self.spectrum.total,
            "cuts": cuts,
            "spectrum_hash": spectrum_hash(self.spectrum),
        }


def spectrum_hash(spectrum: BinnedSpectrum) -> str:
    return hash_payload({
        "edges": spectrum.bin_edges,
        "counts": spectrum.counts,
        "live_time": spectrum.live_time,
    })


@dataclass
class RunReport:
    """
    Everything a run produced, traceable to its configuration hash.

    ``report_hash`` covers the configuration hash and every numeric result but not
    timings, file locations, package versions or the audit, so reruns with the same
    seeds reproduce it exactly.
    """

    run_id: str
    config: Dict[str, Any]
    config_hash: str
    calibration: Dict[str, Any]
    datasets: List[DatasetRecord]
    overdispersion: float
    map_params: Optional[ModelParams] = None
    model_counts: Dict[str, np.ndarray] = field(default_factory=dict)
    summary: Optional[PosteriorSummary] = None
    gauge: Optional[GaugeComparison] = None
    background: Optional[BackgroundFit] = None
    stages: List[StageRecord] = field(default_factory=list)
    versions: Dict[str, str] = field(default_factory=package_versions)
    audit: Dict[str, Any] = field(default_factory=dict)
    paths: Dict[str, Any] = field(default_factory=dict)

    @property
    def gas(self) -> str:
        return str(self.config.get("gas", ""))

    @property
    def converged(self) -> bool:
        return self.summary is None or self.summary.converged

    def dataset(self, dataset_id: str) -> DatasetRecord:
        for record in self.datasets:
            if record.dataset_id == dataset_id:
                return record
        raise KeyError(f"No dataset {dataset_id!r} in report")

    def pressure_table(self) -> List[Dict[str, Any]]:
        """Fitted pressure of every fitted dataset next to its gauge reading."""
        if self.summary is None:
            return []
        by_id = {p.dataset_id: p for p in self.summary.pressures}
        rows = []
        for record in self.datasets:
            estimate = by_id.get(record.dataset_id)
            if estimate is None:
                continue
            rows.append({
                "dataset_id": record.dataset_id,
                "true_pressure": record.pressure,
                "gauge_pressure": record.gauge_pressure,
                "pressure_med": estimate.median,
                "pressure_lo": estimate.lo,
                "pressure_hi": estimate.hi,
            })
        return rows

    def _results(self, include_timings: bool) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "config": self.config,
            "calibration": self.calibration,
            "overdispersion": self.overdispersion,
            "datasets": [d.to_dict() for d in self.datasets],
            "map": None if self.map_params is None else dict(zip(
                ModelParams.names(len(self.map_params.datasets)), self.map_params.to_vector().tolist()
            )),
            "model_counts": {k: np.asarray(v).tolist() for k, v in sorted(self.model_counts.items())},
            "fit_summary": None if self.summary is None else self.summary.to_dict(),
            "gauge_comparison": None if self.gauge is None else self.gauge.to_dict(),
            "background_fit": None if self.background is None else self.background.to_dict(),
            "stages": [s.to_dict(include_timings) for s in self.stages],
        }

    @property
    def report_hash(self) -> str:
        results = self._results(include_timings=False)
        results["config"] = {k: v for k, v in results["config"].items() if k not in ("output_dir", "workers", "env")}
        return hash_payload(results)

    def to_dict(self) -> Dict[str, Any]:
        data = self._results(include_timings=True)
        data["report_hash"] = self.report_hash
        data["versions"] = self.versions
        data["audit"] = self.audit
        data["paths"] = self.paths
        data["converged"] = self.converged
        return json.loads(json.dumps(data, default=json_default, allow_nan=True))


def _nan_to_none(value: Any) -> Any:
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _nan_to_none(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_nan_to_none(v) for v in value]
    return value


def write_report(report: RunReport, path: Path) -> Path:
    """Write the report as JSON after schema validation; non-finite numbers become null."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = _nan_to_none(report.to_dict())
    with open(SCHEMAS_DIR / "report_schema.json", "r", encoding="utf-8") as f:
        validate(instance=data, schema=json.load(f))
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    logger.info(f"Wrote run report {path} (hash {report.report_hash[:12]})")
    return path
