"""Domain types for gas-collision kinetics and the gas registry."""

import json
import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from scipy.integrate import trapezoid
from jsonschema import ValidationError, validate

from src.config import GASES_FILE, KINETICS_DEFAULTS, SCHEMAS_DIR
from src.errors import ConfigurationError, DomainError
from src.kinetics.units import AMU

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GasSpecies:
    """Gas species; mass in unified atomic mass units."""

    name: str
    mass: float

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError(f"Gas mass must be positive, got {self.mass} u for {self.name}")

    @property
    def mass_kg(self) -> float:
        return self.mass * AMU


@dataclass(frozen=True)
class Environment:
    """Gas environment: temperature in K, pressure in mbar."""

    pressure: float = 0.0
    gas_temperature: float = KINETICS_DEFAULTS["gas_temperature"]

    def __post_init__(self):
        if not self.gas_temperature > 0:
            raise DomainError(f"Gas temperature must be positive, got {self.gas_temperature} K")
        if self.pressure < 0:
            raise DomainError(f"Pressure must be non-negative, got {self.pressure} mbar")


@dataclass(frozen=True)
class SphereSurface:
    """Nanosphere surface: radius in m, temperature in K, accommodation in [0, 1]."""

    radius: float = KINETICS_DEFAULTS["sphere_radius"]
    surface_temperature: float = KINETICS_DEFAULTS["gas_temperature"]
    accommodation: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"Sphere radius must be positive, got {self.radius} m")
        if self.surface_temperature < 0:
            raise DomainError(f"Surface temperature must be >= 0, got {self.surface_temperature} K")
        if not 0.0 <= self.accommodation <= 1.0:
            raise DomainError(f"Accommodation must lie in [0, 1], got {self.accommodation}")


@dataclass(frozen=True)
class SpectrumParams:
    """Full parameter vector of the smeared collision spectrum.

    Pressure in mbar, temperatures in K, sigma_q in keV/c, radius in m.
    """

    gas: GasSpecies
    pressure: float
    alpha: float
    surface_temperature: float
    sigma_q: float
    gas_temperature: float = KINETICS_DEFAULTS["gas_temperature"]
    radius: float = KINETICS_DEFAULTS["sphere_radius"]

    @property
    def environment(self) -> Environment:
        return Environment(pressure=self.pressure, gas_temperature=self.gas_temperature)

    @property
    def sphere(self) -> SphereSurface:
        return SphereSurface(
            radius=self.radius,
            surface_temperature=self.surface_temperature,
            accommodation=self.alpha,
        )

    def with_values(self, **changes) -> "SpectrumParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class RateDensity:
    """Rate density in s^-1 (keV/c)^-1 on an ascending |q_z| grid in keV/c."""

    grid: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        density = np.asarray(self.density, dtype=float)
        if grid.shape != density.shape:
            raise DomainError("Grid and density must have the same shape")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise DomainError("Rate-density grid must be strictly increasing")
        if np.any(density < 0):
            raise DomainError("Rate density must be non-negative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "density", density)

    def integral(self) -> float:
        """Total rate over the grid (trapezoid rule), s^-1."""
        return float(trapezoid(self.density, self.grid))

    def __add__(self, other: "RateDensity") -> "RateDensity":
        if not np.array_equal(self.grid, other.grid):
            raise DomainError("Cannot add rate densities on different grids")
        return RateDensity(self.grid, self.density + other.density)


@dataclass(frozen=True)
class GaussianBackground:
    """Gaussian noise-background component: total rate (s^-1), mean and width (keV/c)."""

    rate: float
    mean: float
    width: float

    def __post_init__(self):
        if self.rate < 0:
            raise DomainError(f"Background rate must be >= 0, got {self.rate}")
        if not self.width > 0:
            raise DomainError(f"Background width must be positive, got {self.width}")


def _gas_schema() -> Dict:
    with open(SCHEMAS_DIR / "gas_schema.json", "r", encoding="utf-8") as f:
        return json.load(f)


@lru_cache(maxsize=4)
def load_gas_registry(path: Optional[Path] = None) -> Dict[str, GasSpecies]:
    """
    Load registered gases from data/gases.json.

    Args:
        path: Registry file. Defaults to GASES_FILE.

    Returns:
        Mapping from gas id to GasSpecies for active entries.

    Raises:
        ConfigurationError: If an entry fails schema validation.
    """
    registry_file = Path(path) if path else GASES_FILE
    with open(registry_file, "r", encoding="utf-8") as f:
        entries = json.load(f)

    schema = _gas_schema()
    gases = {}
    for entry in entries:
        try:
            validate(instance=entry, schema=schema)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid gas entry {entry.get('id', '?')}: {e.message}") from e
        if entry.get("active", True):
            gases[entry["id"]] = GasSpecies(name=entry["id"], mass=float(entry["mass_u"]))

    logger.debug(f"Loaded {len(gases)} gases from {registry_file}")
    return gases


def get_gas(name: str) -> GasSpecies:
    """Look up a registered gas by id (case-insensitive)."""
    gases = load_gas_registry()
    for key, gas in gases.items():
        if key.lower() == name.lower():
            return gas
    raise ConfigurationError(f"Unknown gas '{name}'. Registered: {', '.join(sorted(gases))}")
