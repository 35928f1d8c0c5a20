"""Sistema de logging imutável da proveniência de cada etapa do pipeline."""

import hashlib
import json
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from src.config import LOGS_DIR


class Stage(str, Enum):
    CALIBRATION = "calibration"
    SIMULATION = "simulation"
    RECONSTRUCTION = "reconstruction"
    BINNING = "binning"
    FIT = "fit"
    SENSITIVITY = "sensitivity"
    REPORT = "report"


class StageStatus(str, Enum):
    SUCCESS = "success"
    SKIPPED = "skipped"
    ERROR = "error"


def json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (Path, Enum)):
        return str(getattr(value, "value", value))
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"Cannot hash object of type {type(value).__name__}")


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, default=json_default)


def hash_payload(data: Any) -> str:
    """Gera hash SHA-256 da forma JSON canônica de ``data``."""
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


class ProvenanceLogger:
    """Logger que registra cada etapa de uma execução com hashes de entrada e saída."""

    def __init__(self, run_id: str, logs_dir: Optional[Path] = None):
        self.run_id = run_id
        self.logs_dir = Path(logs_dir) if logs_dir is not None else LOGS_DIR
        self.logs_dir.mkdir(parents=True, exist_ok=True)
        self.log_file = self.logs_dir / f"{run_id}_provenance.jsonl"

    def log_stage(
        self,
        stage: Stage,
        dataset_id: str,
        inputs: Any = None,
        outputs: Any = None,
        status: StageStatus = StageStatus.SUCCESS,
        duration: Optional[float] = None,
        **details,
    ) -> Optional[str]:
        """Registra um evento de etapa e retorna o hash de saída."""
        output_hash = hash_payload(outputs) if outputs is not None else None
        entry = {
            "timestamp": utc_timestamp(),
            "run_id": self.run_id,
            "operation": Stage(stage).value,
            "dataset_id": dataset_id,
            "status": StageStatus(status).value,
            "input_hash": hash_payload(inputs) if inputs is not None else None,
            "output_hash": output_hash,
            "duration_s": duration,
        }
        if details:
            entry["details"] = json.loads(canonical_json(details))
        self._write_log(entry)
        return output_hash

    @contextmanager
    def stage(self, stage: Stage, dataset_id: str, inputs: Any = None) -> Iterator[Dict[str, Any]]:
        """
        Cronometra um bloco e o registra; o bloco preenche ``record["outputs"]`` e detalhes opcionais.

        Um bloco que falha é registrado com status error e a exceção é relançada.
        """
        record: Dict[str, Any] = {"outputs": None, "details": {}}
        start = time.perf_counter()
        try:
            yield record
        except Exception as e:
            self.log_stage(
                stage, dataset_id, inputs, None, StageStatus.ERROR,
                time.perf_counter() - start, error=str(e), **record["details"],
            )
            raise
        status = record.get("status", StageStatus.SUCCESS)
        record["hash"] = self.log_stage(
            stage, dataset_id, inputs, record["outputs"], status,
            time.perf_counter() - start, **record["details"],
        )

    def _write_log(self, entry: Dict[str, Any]):
        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def get_logs(self, operation: Optional[str] = None) -> List[Dict[str, Any]]:
        if not self.log_file.exists():
            return []
        logs = []
        with open(self.log_file, "r", encoding="utf-8") as f:
            for line in f:
                log = json.loads(line)
                if operation is None or log.get("operation") == getattr(operation, "value", operation):
                    logs.append(log)
        return logs
