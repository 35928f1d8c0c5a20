"""Event-list and spectrum files."""

import csv
import json
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
from jsonschema import ValidationError, validate

from src.config import SCHEMA_VERSION, SCHEMAS_DIR
from src.dynsim.trace_io import check_schema_version
from src.errors import SchemaVersionError
from src.recon.binning import BinnedSpectrum
from src.recon.candidates import CandidateTable

logger = logging.getLogger(__name__)

EVENT_FIELDS = ["time_s", "amplitude_kevc", "gof", "flags"]
SPECTRUM_FIELDS = ["lo_edge", "hi_edge", "counts"]


def write_events(candidates: CandidateTable, path: Path) -> Path:
    """Write one row per search window; flags is the integer bitfield."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# schema_version={SCHEMA_VERSION} sample_rate={candidates.sample_rate!r} "
                f"search_window={candidates.search_window!r}\n")
        writer = csv.writer(f)
        writer.writerow(EVENT_FIELDS)
        for t, a, g, flags in zip(candidates.time, candidates.amplitude, candidates.gof, candidates.flags):
            writer.writerow([repr(float(t)), repr(float(a)), "" if np.isnan(g) else repr(float(g)), int(flags)])
    return path


def read_events(path: Path) -> CandidateTable:
    with open(path, "r", newline="", encoding="utf-8") as f:
        comment = f.readline()
        settings = dict(item.split("=", 1) for item in comment.lstrip("# ").split())
        check_schema_version(settings.get("schema_version", "0"), "event list")
        rows = list(csv.DictReader(f))
    sample_rate = float(settings["sample_rate"])
    return CandidateTable(
        sample_index=np.rint(np.array([float(r["time_s"]) for r in rows]) * sample_rate).astype(np.int64),
        amplitude=np.array([float(r["amplitude_kevc"]) for r in rows]),
        sample_rate=sample_rate,
        search_window=float(settings["search_window"]),
        gof=np.array([float(r["gof"]) if r["gof"] else np.nan for r in rows]),
        flags=np.array([int(r["flags"]) for r in rows], dtype=np.uint8),
    )


def _spectrum_schema():
    with open(SCHEMAS_DIR / "spectrum_schema.json", "r", encoding="utf-8") as f:
        return json.load(f)


def spectrum_paths(path: Path) -> Tuple[Path, Path]:
    path = Path(path)
    return path.with_suffix(".csv"), path.with_suffix(".json")


def write_spectrum(spectrum: BinnedSpectrum, path: Path) -> Tuple[Path, Path]:
    """Write the spectrum CSV and its JSON metadata sidecar."""
    csv_path, json_path = spectrum_paths(path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SPECTRUM_FIELDS)
        for lo, hi, k in zip(spectrum.bin_edges[:-1], spectrum.bin_edges[1:], spectrum.counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(k)])

    meta = {
        "schema_version": SCHEMA_VERSION,
        "live_time": spectrum.live_time,
        "raw_time": spectrum.raw_time,
    }
    meta.update(spectrum.metadata)
    validate(instance=meta, schema=_spectrum_schema())
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    logger.info(f"Wrote spectrum {csv_path}")
    return csv_path, json_path


def read_spectrum(path: Path) -> BinnedSpectrum:
    csv_path, json_path = spectrum_paths(path)
    with open(json_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    check_schema_version(meta.get("schema_version", "0"), "spectrum")
    try:
        validate(instance=meta, schema=_spectrum_schema())
    except ValidationError as e:
        raise SchemaVersionError(f"Invalid spectrum metadata in {json_path}: {e.message}") from e

    with open(csv_path, "r", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    lo = [float(r["lo_edge"]) for r in rows]
    edges = np.array(lo + [float(rows[-1]["hi_edge"])])
    counts = np.array([int(r["counts"]) for r in rows])

    live_time = meta.pop("live_time")
    raw_time = meta.pop("raw_time", None)
    meta.pop("schema_version", None)
    return BinnedSpectrum(edges, counts, live_time, raw_time, meta)
