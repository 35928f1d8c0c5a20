"""Unit conversions between the external (keV/c, mbar, u) and SI systems."""

import numpy as np
from scipy import constants

# 1 keV/c in kg m/s
KEV_C = constants.e * 1e3 / constants.c
MBAR = 100.0  # Pa
AMU = constants.physical_constants["atomic mass constant"][0]
K_B = constants.k
HBAR = constants.hbar


def kevc_to_si(value):
    """Momentum in keV/c to kg m/s."""
    return np.asarray(value, dtype=float) * KEV_C if np.ndim(value) else float(value) * KEV_C


def si_to_kevc(value):
    """Momentum in kg m/s to keV/c."""
    return np.asarray(value, dtype=float) / KEV_C if np.ndim(value) else float(value) / KEV_C


def mbar_to_pa(pressure):
    return pressure * MBAR


def amu_to_kg(mass):
    return mass * AMU


def sql_impulse(mass: float, resonance_frequency: float) -> float:
    """Standard quantum limit for impulse sqrt(hbar m Omega) in keV/c."""
    omega = 2.0 * np.pi * resonance_frequency
    return float(np.sqrt(HBAR * mass * omega) / KEV_C)
