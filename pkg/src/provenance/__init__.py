"""Módulo de proveniência, logging e auditoria."""

from src.provenance.auditor import REQUIRED_STAGES, ProvenanceAuditor
from src.provenance.logger import ProvenanceLogger, Stage, StageStatus, canonical_json, hash_payload

__all__ = [
    "REQUIRED_STAGES",
    "ProvenanceAuditor",
    "ProvenanceLogger",
    "Stage",
    "StageStatus",
    "canonical_json",
    "hash_payload",
]
