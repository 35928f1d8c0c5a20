"""Plot-ready tables: rates with model and residuals per dataset, fitted vs gauge pressures per gas."""

import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from src.config import SCHEMA_VERSION
from src.pipeline.report import DatasetRecord, RunReport

logger = logging.getLogger(__name__)

RATE_FIELDS = [
    "lo_edge", "hi_edge", "counts", "rate", "rate_error",
    "model_counts", "model_rate", "residual",
]
PRESSURE_FIELDS = [
    "dataset_id", "true_pressure", "gauge_pressure",
    "pressure_med", "pressure_lo", "pressure_hi",
]


def normalized_residuals(counts: np.ndarray, expected: np.ndarray, overdispersion: float) -> np.ndarray:
    """(k - mu) / sqrt(mu (1 + delta)); NaN where mu is not positive."""
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    variance = expected * (1.0 + overdispersion)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(variance > 0, (counts - expected) / np.sqrt(variance), np.nan)


def rate_rows(record: DatasetRecord, model: Optional[np.ndarray], overdispersion: float) -> List[Dict[str, float]]:
    spectrum = record.spectrum
    if spectrum.live_time <= 0 or spectrum.counts.size == 0:
        return []
    exposure = spectrum.live_time * spectrum.widths
    counts = spectrum.counts.astype(float)
    if model is None:
        model = np.full(counts.size, np.nan)
    model = np.asarray(model, dtype=float)
    residual = normalized_residuals(counts, model, overdispersion)

    rows = []
    for i in range(counts.size):
        rows.append({
            "lo_edge": float(spectrum.bin_edges[i]),
            "hi_edge": float(spectrum.bin_edges[i + 1]),
            "counts": int(counts[i]),
            "rate": counts[i] / exposure[i],
            "rate_error": np.sqrt(counts[i]) / exposure[i],
            "model_counts": model[i],
            "model_rate": model[i] / exposure[i],
            "residual": residual[i],
        })
    return rows


def _write_csv(path: Path, fields: List[str], rows: List[Dict[str, float]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if isinstance(v, float) and not np.isfinite(v) else v for k, v in row.items()})
    return path


def emit_figure_data(report: RunReport, out_dir: Path) -> List[Path]:
    """
    Write one rate/model/residual table per dataset and one pressure-comparison table
    per gas, plus an index JSON listing them.

    Datasets without a fitted model (excluded or background-only) get empty model and
    residual columns; datasets with no live time get a header-only table.
    """
    out_dir = Path(out_dir)
    written = []
    tables = []
    for record in report.datasets:
        model = report.model_counts.get(record.dataset_id)
        rows = rate_rows(record, model, report.overdispersion)
        path = _write_csv(out_dir / f"rates_{record.dataset_id}.csv", RATE_FIELDS, rows)
        written.append(path)
        tables.append({
            "kind": "rates",
            "dataset_id": record.dataset_id,
            "file": path.name,
            "live_time": record.spectrum.live_time,
            "fitted": model is not None,
        })

    gas = report.gas.lower() or "gas"
    path = _write_csv(out_dir / f"pressure_comparison_{gas}.csv", PRESSURE_FIELDS, report.pressure_table())
    written.append(path)
    tables.append({"kind": "pressure_comparison", "gas": report.gas, "file": path.name})

    index = {
        "schema_version": SCHEMA_VERSION,
        "run_id": report.run_id,
        "config_hash": report.config_hash,
        "overdispersion": report.overdispersion,
        "tables": tables,
    }
    index_path = out_dir / "figure_index.json"
    with open(index_path, "w", encoding="utf-8") as f:
        json.dump(index, f, indent=2, sort_keys=True)
    written.append(index_path)
    logger.info(f"Wrote {len(tables)} figure tables to {out_dir}")
    return written
