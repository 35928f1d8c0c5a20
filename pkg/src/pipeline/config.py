"""Run configuration from config/experiment.yml and environment variables."""

import copy
import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import yaml
from jsonschema import ValidationError, validate

from src.config import (
    ANALYSIS_RULES,
    BASE_DIR,
    EXPERIMENT_CONFIG_FILE,
    INFERENCE_DEFAULTS,
    SCHEMAS_DIR,
    SIMULATION_DEFAULTS,
)
from src.errors import ConfigurationError
from src.kinetics.species import get_gas
from src.provenance.logger import hash_payload

logger = logging.getLogger(__name__)

DEFAULT_ENV = "desk"
_PLACEHOLDER = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")

# Keys that change where or how fast a run executes but not its results
_UNHASHED = ("env", "output_dir", "workers")

RUN_DEFAULTS: Dict[str, Any] = {
    "background_duration": 0.0,
    "workers": 1,
    "threshold": ANALYSIS_RULES["threshold"],
    "binning": dict(ANALYSIS_RULES["bin_edges"]),
    "anomalous": {"rate": 0.0, "mean_amplitude": 200.0},
    "calibration": {
        "period": SIMULATION_DEFAULTS["calibration_period"],
        "amplitude": SIMULATION_DEFAULTS["calibration_amplitude"],
        "pulses": SIMULATION_DEFAULTS["calibration_pulses"],
        "linearity_pulses": 60,
    },
    "likelihood": {
        "total_constraint": INFERENCE_DEFAULTS["total_constraint"],
        "fit_bg_mean": INFERENCE_DEFAULTS["fit_bg_mean"],
        "kernel_method": INFERENCE_DEFAULTS["kernel_method"],
    },
    "sampler": {
        "steps": INFERENCE_DEFAULTS["mcmc_steps"],
        "chains": INFERENCE_DEFAULTS["mcmc_chains"],
        "burn_fraction": INFERENCE_DEFAULTS["mcmc_burn_fraction"],
    },
    "gauge": {"relative_scatter": 0.05, "base_pressure": 0.0},
    "closure": {"trials": 100, "mode": "spectrum", "live_time": 10.0},
}


@dataclass(frozen=True)
class RunConfig:
    """One fully resolved run: physics truth, exposure, seeds, analysis and sampler settings."""

    gas: str
    pressures: Tuple[float, ...]
    alpha: float
    surface_temperature: float
    sigma_q_target: float
    duration: float
    seed: int
    output_dir: Path
    background_duration: float = 0.0
    workers: int = 1
    threshold: float = ANALYSIS_RULES["threshold"]
    binning: Dict[str, float] = field(default_factory=lambda: dict(RUN_DEFAULTS["binning"]))
    anomalous: Dict[str, float] = field(default_factory=lambda: dict(RUN_DEFAULTS["anomalous"]))
    calibration: Dict[str, Any] = field(default_factory=lambda: dict(RUN_DEFAULTS["calibration"]))
    likelihood: Dict[str, Any] = field(default_factory=lambda: dict(RUN_DEFAULTS["likelihood"]))
    sampler: Dict[str, Any] = field(default_factory=lambda: dict(RUN_DEFAULTS["sampler"]))
    gauge: Dict[str, float] = field(default_factory=lambda: dict(RUN_DEFAULTS["gauge"]))
    closure: Dict[str, Any] = field(default_factory=lambda: dict(RUN_DEFAULTS["closure"]))
    env: str = DEFAULT_ENV

    @property
    def bin_edges(self) -> np.ndarray:
        b = self.binning
        return np.arange(b["start"], b["stop"] + 0.5 * b["step"], b["step"])

    @property
    def run_id(self) -> str:
        return f"{self.gas.lower()}_{self.env}_{self.seed}_{self.config_hash[:8]}"

    @property
    def config_hash(self) -> str:
        data = self.to_dict()
        for key in _UNHASHED:
            data.pop(key, None)
        return hash_payload(data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["pressures"] = list(self.pressures)
        data["output_dir"] = str(self.output_dir)
        return data

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **changes)


def expand_variables(value: Any) -> Any:
    """
    Resolve ``${VAR:-default}`` placeholders recursively.

    A string that is a single placeholder is re-read as YAML so that numbers and
    booleans keep their type.

    Raises:
        ConfigurationError: If a variable without default is unset.
    """
    if isinstance(value, dict):
        return {k: expand_variables(v) for k, v in value.items()}
    if isinstance(value, list):
        return [expand_variables(v) for v in value]
    if not isinstance(value, str) or "${" not in value:
        return value

    def substitute(match):
        name, default = match.group(1), match.group(2)
        resolved = os.getenv(name, default)
        if resolved is None:
            raise ConfigurationError(f"Environment variable {name} is not set and has no default")
        return resolved

    expanded = _PLACEHOLDER.sub(substitute, value)
    if _PLACEHOLDER.fullmatch(value.strip()):
        return yaml.safe_load(expanded)
    return expanded


def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _select_environment(all_configs: Any, env: str, path: Path) -> Dict[str, Any]:
    if not isinstance(all_configs, dict):
        raise ConfigurationError(f"{path} does not contain a mapping")
    if "gas" in all_configs:
        return all_configs
    if env not in all_configs:
        raise ConfigurationError(f"Environment '{env}' not found in {path.name}")
    return all_configs[env]


def _schema() -> Dict[str, Any]:
    with open(SCHEMAS_DIR / "run_config_schema.json", "r", encoding="utf-8") as f:
        return json.load(f)


def _resolve_output(path: str) -> Path:
    output = Path(path)
    if not output.is_absolute():
        output = BASE_DIR / output
    try:
        output.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(f"Output directory {output} cannot be created: {e}") from e
    if not os.access(output, os.W_OK):
        raise ConfigurationError(f"Output directory {output} is not writable")
    return output


def _check_semantics(data: Dict[str, Any]):
    get_gas(data["gas"])
    binning = data["binning"]
    if binning["start"] < data["threshold"]:
        raise ConfigurationError(
            f"First bin edge {binning['start']} lies below the threshold {data['threshold']}"
        )
    if binning["stop"] <= binning["start"]:
        raise ConfigurationError("Binning stop must exceed start")


def build_run_config(data: Mapping[str, Any], env: str = DEFAULT_ENV) -> RunConfig:
    """Validate a raw environment mapping and turn it into a RunConfig."""
    merged = expand_variables(_deep_merge(RUN_DEFAULTS, data))
    try:
        validate(instance=merged, schema=_schema())
    except ValidationError as e:
        location = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigurationError(f"Invalid run configuration at {location}: {e.message}") from e
    _check_semantics(merged)

    merged["pressures"] = tuple(float(p) for p in merged["pressures"])
    merged["output_dir"] = _resolve_output(merged["output_dir"])
    return RunConfig(env=env, **merged)


def load_run_config(
    path: Optional[Path] = None,
    env: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Load one environment of a run configuration file.

    Args:
        path: YAML file holding either an environment map or a single environment.
            Defaults to config/experiment.yml.
        env: Environment name. Defaults to GASCOLL_ENV, then "desk".
        overrides: Values applied on top of the file (nested mappings are merged).

    Raises:
        ConfigurationError: On missing files, unknown environments or invalid values.
    """
    env = env or os.getenv("GASCOLL_ENV", DEFAULT_ENV)
    config_file = Path(path) if path else EXPERIMENT_CONFIG_FILE
    if not config_file.exists():
        raise ConfigurationError(f"Run config file not found: {config_file}")
    with open(config_file, "r", encoding="utf-8") as f:
        all_configs = yaml.safe_load(f)

    data = _select_environment(all_configs, env, config_file)
    if overrides:
        data = _deep_merge(data, {k: v for k, v in overrides.items() if v is not None})
    config = build_run_config(data, env)
    logger.info(f"Loaded run config '{env}' from {config_file.name} (hash {config.config_hash[:12]})")
    return config
