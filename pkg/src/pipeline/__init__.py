"""Módulo de orquestração: configuração, execuções completas, estudos de fechamento e relatórios."""

from src.pipeline.config import RunConfig, build_run_config, expand_variables, load_run_config
from src.pipeline.report import DatasetRecord, RunReport, StageRecord, write_report
from src.pipeline.figures import emit_figure_data, normalized_residuals
from src.pipeline.runner import ExperimentRunner, run_experiment
from src.pipeline.closure import ClosureResult, TrialResult, run_closure, write_closure

__all__ = [
    "ClosureResult",
    "DatasetRecord",
    "ExperimentRunner",
    "RunConfig",
    "RunReport",
    "StageRecord",
    "TrialResult",
    "build_run_config",
    "emit_figure_data",
    "expand_variables",
    "load_run_config",
    "normalized_residuals",
    "run_closure",
    "run_experiment",
    "write_closure",
    "write_report",
]
