"""Sistema de auditoria dos logs de proveniência das execuções."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.config import LOGS_DIR
from src.provenance.logger import Stage, StageStatus, utc_timestamp

REQUIRED_STAGES = (Stage.SIMULATION, Stage.RECONSTRUCTION, Stage.BINNING, Stage.FIT)
RUN_SCOPE = "run"


class ProvenanceAuditor:
    """Auditor que verifica se cada dataset de uma execução passou pela cadeia completa."""

    def __init__(self, logs_dir: Optional[Path] = None, min_success_rate: float = 0.95):
        self.logs_dir = Path(logs_dir) if logs_dir is not None else LOGS_DIR
        self.audit_report_file = self.logs_dir / "audit_log.jsonl"
        self.min_success_rate = min_success_rate

    def log_file(self, run_id: str) -> Path:
        return self.logs_dir / f"{run_id}_provenance.jsonl"

    def list_runs(self) -> List[str]:
        return sorted(p.name[: -len("_provenance.jsonl")] for p in self.logs_dir.glob("*_provenance.jsonl"))

    def audit_run(self, run_id: str, save: bool = True) -> Dict[str, Any]:
        log_file = self.log_file(run_id)
        if not log_file.exists():
            return {"run_id": run_id, "status": "no_logs", "message": "No provenance log for this run"}

        logs = self._read_logs(log_file)
        datasets = sorted({log["dataset_id"] for log in logs if log.get("dataset_id") != RUN_SCOPE})
        traceability = {d: self._trace(logs, d) for d in datasets}
        result = {
            "run_id": run_id,
            "audit_date": utc_timestamp(),
            "total_operations": len(logs),
            "operations_by_type": self._count_operations(logs),
            "success_rate": self._calculate_success_rate(logs),
            "datasets": {d: t["traceable"] for d, t in traceability.items()},
            "status": "complete",
        }
        issues = []
        if result["success_rate"] < self.min_success_rate:
            issues.append(f"Stage success rate below {self.min_success_rate:.0%}")
        untraced = [d for d, t in traceability.items() if not t["traceable"]]
        if untraced:
            issues.append(f"Incomplete stage chain for: {', '.join(untraced)}")
        if issues:
            result["status"] = "warning"
            result["issues"] = issues

        if save:
            self._save_audit_report(result)
        return result

    def verify_traceability(self, run_id: str, dataset_id: str) -> Dict[str, Any]:
        log_file = self.log_file(run_id)
        if not log_file.exists():
            return {"traceable": False, "reason": "No provenance log for this run"}
        return self._trace(self._read_logs(log_file), dataset_id)

    def _trace(self, logs: List[Dict[str, Any]], dataset_id: str) -> Dict[str, Any]:
        dataset_logs = [log for log in logs if log.get("dataset_id") == dataset_id]
        if not dataset_logs:
            return {"traceable": False, "reason": "Dataset not found in the log"}
        done = {
            log["operation"] for log in dataset_logs if log.get("status") != StageStatus.ERROR.value
        }
        missing = [s.value for s in REQUIRED_STAGES if s.value not in done]
        return {
            "traceable": not missing,
            "dataset_id": dataset_id,
            "operations_found": sorted(done),
            "missing": missing,
            "timeline": sorted(dataset_logs, key=lambda x: x["timestamp"]),
        }

    def _read_logs(self, log_file: Path) -> List[Dict[str, Any]]:
        with open(log_file, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]

    def _count_operations(self, logs: List[Dict[str, Any]]) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for log in logs:
            op = log.get("operation", "unknown")
            counts[op] = counts.get(op, 0) + 1
        return counts

    def _calculate_success_rate(self, logs: List[Dict[str, Any]]) -> float:
        if not logs:
            return 0.0
        failed = sum(1 for log in logs if log.get("status") == StageStatus.ERROR.value)
        return 1.0 - failed / len(logs)

    def _save_audit_report(self, report: Dict[str, Any]):
        with open(self.audit_report_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(report, ensure_ascii=False) + "\n")
