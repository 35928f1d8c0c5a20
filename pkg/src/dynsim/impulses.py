"""Impulse trains: Poisson gas collisions, calibration pulses and ad-hoc anomalous kicks."""

import enum
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.config import SIMULATION_DEFAULTS
from src.errors import DomainError
from src.kinetics import (
    SpectrumParams,
    sample_diffuse_collision,
    sample_specular_collision,
    total_collision_rate,
)


class ImpulseOrigin(str, enum.Enum):
    COLLISION = "collision"
    CALIBRATION = "calibration"
    ANOMALOUS = "anomalous"


@dataclass(frozen=True)
class ImpulseTrain:
    """Impulse times (s), signed z amplitudes (keV/c) and origin tags."""

    times: np.ndarray
    amplitudes: np.ndarray
    origins: np.ndarray = field(default=None)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        amplitudes = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        if times.shape != amplitudes.shape:
            raise DomainError("Impulse times and amplitudes must have the same length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DomainError("Impulse times must be strictly increasing")
        if np.any(times < 0):
            raise DomainError("Impulse times must be >= 0")

        origins = self.origins
        if origins is None:
            origins = np.full(times.size, ImpulseOrigin.COLLISION.value, dtype=object)
        origins = np.asarray([getattr(o, "value", o) for o in origins], dtype=object).reshape(-1)
        if origins.shape != times.shape:
            raise DomainError("One origin tag per impulse is required")
        if not np.all(np.isin(origins, [o.value for o in ImpulseOrigin])):
            raise DomainError("Unknown impulse origin tag")

        object.__setattr__(self, "times", times)
        object.__setattr__(self, "amplitudes", amplitudes)
        object.__setattr__(self, "origins", origins)

    @classmethod
    def empty(cls) -> "ImpulseTrain":
        return cls(np.empty(0), np.empty(0), np.empty(0, dtype=object))

    def __len__(self) -> int:
        return int(self.times.size)

    def select(self, origin: ImpulseOrigin) -> "ImpulseTrain":
        mask = self.origins == ImpulseOrigin(origin).value
        return ImpulseTrain(self.times[mask], self.amplitudes[mask], self.origins[mask])

    def within(self, duration: float) -> bool:
        return len(self) == 0 or float(self.times[-1]) < duration

    def shifted(self, dt: float) -> "ImpulseTrain":
        return ImpulseTrain(self.times + dt, self.amplitudes, self.origins)


def merge_trains(*trains: ImpulseTrain) -> ImpulseTrain:
    """Merge trains into one time-ordered train."""
    trains = [t for t in trains if len(t)]
    if not trains:
        return ImpulseTrain.empty()
    times = np.concatenate([t.times for t in trains])
    order = np.argsort(times, kind="stable")
    return ImpulseTrain(
        times[order],
        np.concatenate([t.amplitudes for t in trains])[order],
        np.concatenate([t.origins for t in trains])[order],
    )


def sample_impulse_train(
    params: SpectrumParams,
    duration: float,
    rng: np.random.Generator,
) -> ImpulseTrain:
    """
    Poisson collision arrivals with signed z momentum transfers.

    Each collision is diffuse with probability alpha and specular otherwise.
    """
    if not duration > 0:
        raise DomainError(f"Duration must be positive, got {duration}")
    env, sphere = params.environment, params.sphere
    rate = total_collision_rate(params.gas, env, sphere)
    n = int(rng.poisson(rate * duration))
    if n == 0:
        return ImpulseTrain.empty()

    times = np.sort(rng.uniform(0.0, duration, n))
    diffuse = rng.random(n) < params.alpha
    amplitudes = np.empty(n)
    n_diffuse = int(diffuse.sum())
    if n_diffuse:
        amplitudes[diffuse] = sample_diffuse_collision(params.gas, env, sphere, rng, size=n_diffuse)[:, 2]
    if n - n_diffuse:
        amplitudes[~diffuse] = sample_specular_collision(params.gas, env, sphere, rng, size=n - n_diffuse)[:, 2]

    return ImpulseTrain(times, amplitudes, np.full(n, ImpulseOrigin.COLLISION.value, dtype=object))


def schedule_calibration_pulses(
    duration: float,
    period: float = SIMULATION_DEFAULTS["calibration_period"],
    amplitude: float = SIMULATION_DEFAULTS["calibration_amplitude"],
    jitter: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> ImpulseTrain:
    """
    Deterministic calibration pulses at t = period, 2 period, ... below duration.

    Args:
        jitter: Fractional RMS amplitude jitter; requires rng when non-zero.
    """
    if not period > 0:
        raise DomainError(f"Calibration period must be positive, got {period}")
    count = int(np.ceil(duration / period - 1e-9)) - 1
    times = period * np.arange(1, max(count, 0) + 1)
    times = times[times < duration]
    amplitudes = np.full(times.size, float(amplitude))
    if jitter:
        if rng is None:
            raise DomainError("Amplitude jitter requires a random generator")
        amplitudes *= 1.0 + jitter * rng.standard_normal(times.size)
    return ImpulseTrain(times, amplitudes, np.full(times.size, ImpulseOrigin.CALIBRATION.value, dtype=object))


def pulses_at(times: List[float], amplitudes: List[float]) -> ImpulseTrain:
    """Calibration-tagged train at explicit times."""
    times = np.asarray(times, dtype=float)
    return ImpulseTrain(
        times,
        np.asarray(amplitudes, dtype=float),
        np.full(times.size, ImpulseOrigin.CALIBRATION.value, dtype=object),
    )


def sample_anomalous_impulses(
    rate: float,
    mean_amplitude: float,
    duration: float,
    rng: np.random.Generator,
) -> ImpulseTrain:
    """Ad-hoc non-Gaussian background: Poisson times, exponential |amplitude|, random sign."""
    if rate < 0 or mean_amplitude < 0:
        raise DomainError("Anomalous rate and mean amplitude must be >= 0")
    n = int(rng.poisson(rate * duration)) if rate > 0 else 0
    if n == 0:
        return ImpulseTrain.empty()
    times = np.sort(rng.uniform(0.0, duration, n))
    amplitudes = rng.exponential(mean_amplitude, n) * rng.choice([-1.0, 1.0], n)
    return ImpulseTrain(times, amplitudes, np.full(n, ImpulseOrigin.ANOMALOUS.value, dtype=object))
