"""Binary trace files and CSV truth sidecars.

Layout: 8-byte magic ``NSTRACE1``, little-endian uint32 header length, UTF-8 JSON
header, ``n_samples`` little-endian float64 positions, ``n_monitor`` little-endian
float64 monitor powers.
"""

import csv
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from jsonschema import ValidationError, validate

from src.config import SCHEMA_VERSION, SCHEMAS_DIR
from src.dynsim.impulses import ImpulseTrain
from src.dynsim.oscillator import ReadoutTrace
from src.errors import DomainError, SchemaVersionError

logger = logging.getLogger(__name__)

MAGIC = b"NSTRACE1"
TRUTH_FIELDS = ["time_s", "amplitude_kevc", "origin"]


def check_schema_version(version: str, kind: str):
    """Reject files whose major schema version differs from ours."""
    major = str(version).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionError(f"Unsupported {kind} schema version {version} (expected {SCHEMA_VERSION})")


def _header_schema() -> Dict[str, Any]:
    with open(SCHEMAS_DIR / "trace_header_schema.json", "r", encoding="utf-8") as f:
        return json.load(f)


def truth_path(path: Path) -> Path:
    return Path(path).with_suffix(".truth.csv")


def write_trace(trace: ReadoutTrace, path: Path, write_truth_file: bool = True) -> Path:
    """
    Write a trace and, when it carries truth, its CSV sidecar.

    The seed and spawn key in ``trace.metadata`` are lifted into the header.

    Raises:
        DomainError: If the trace metadata carries no integer seed.
    """
    seed = trace.metadata.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise DomainError("Trace metadata must carry an integer seed to be written")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema_version": SCHEMA_VERSION,
        "sample_rate": trace.sample_rate,
        "duration": trace.duration,
        "seed": int(seed),
        "spawn_key": [int(k) for k in trace.metadata.get("spawn_key", [])],
        "n_samples": trace.n_samples,
        "n_monitor": int(trace.monitor_power.size),
        "search_window": trace.search_window,
        "metadata": trace.metadata,
    }
    if trace.truth is not None and write_truth_file:
        header["truth_file"] = truth_path(path).name
    header_bytes = json.dumps(header, sort_keys=True, default=_json_default).encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(np.ascontiguousarray(trace.samples, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(trace.monitor_power, dtype="<f8").tobytes())

    if trace.truth is not None and write_truth_file:
        write_truth(trace.truth, truth_path(path))
    logger.info(f"Wrote trace {path} ({trace.n_samples} samples)")
    return path


def read_trace_header(path: Path) -> Dict[str, Any]:
    with open(path, "rb") as f:
        header, _ = _read_header(f, path)
    return header


def _read_header(f, path):
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise SchemaVersionError(f"{path} is not a trace file")
    (length,) = struct.unpack("<I", f.read(4))
    header = json.loads(f.read(length).decode("utf-8"))
    check_schema_version(header.get("schema_version", "0"), "trace")
    try:
        validate(instance=header, schema=_header_schema())
    except ValidationError as e:
        raise SchemaVersionError(f"Invalid trace header in {path}: {e.message}") from e
    return header, len(MAGIC) + 4 + length


def read_trace(path: Path, load_truth: bool = True) -> ReadoutTrace:
    """Read a trace file; the truth sidecar is attached when present."""
    path = Path(path)
    with open(path, "rb") as f:
        header, offset = _read_header(f, path)
    samples = np.fromfile(path, dtype="<f8", count=header["n_samples"], offset=offset)
    monitor = np.fromfile(path, dtype="<f8", count=header["n_monitor"], offset=offset + 8 * header["n_samples"])

    truth = None
    if load_truth and header.get("truth_file"):
        sidecar = path.parent / header["truth_file"]
        if sidecar.exists():
            truth = read_truth(sidecar)

    return ReadoutTrace(
        samples=samples.astype(float),
        sample_rate=header["sample_rate"],
        duration=header["duration"],
        monitor_power=monitor.astype(float),
        truth=truth,
        search_window=header["search_window"],
        metadata={**header.get("metadata", {}), "seed": header["seed"], "spawn_key": header["spawn_key"]},
    )


def trace_seed_sequence(header: Dict[str, Any]) -> np.random.SeedSequence:
    """Seed sequence that regenerates the trace described by ``header``."""
    return np.random.SeedSequence(header["seed"], spawn_key=tuple(header["spawn_key"]))


def write_truth(train: ImpulseTrain, path: Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRUTH_FIELDS)
        for t, q, origin in zip(train.times, train.amplitudes, train.origins):
            writer.writerow([repr(float(t)), repr(float(q)), origin])
    return path


def read_truth(path: Path) -> ImpulseTrain:
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return ImpulseTrain.empty()
    return ImpulseTrain(
        np.array([float(r["time_s"]) for r in rows]),
        np.array([float(r["amplitude_kevc"]) for r in rows]),
        np.array([r["origin"] for r in rows], dtype=object),
    )


def _json_default(value: Any) -> Optional[Any]:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
