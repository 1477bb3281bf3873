"""Device, drive and filter parameters.

All rates and frequencies are angular (rad/s). Lab-unit constructors
(GHz/MHz/dBm) convert at the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.constants import hbar, k as k_B

from qubitline.errors import ModelError

TWO_PI = 2.0 * math.pi


def dbm_to_watts(power_dbm: float) -> float:
    if power_dbm == -math.inf:
        return 0.0
    return 10.0 ** ((power_dbm - 30.0) / 10.0)


def watts_to_dbm(power_w: float) -> float:
    if power_w <= 0.0:
        return -math.inf
    return 10.0 * math.log10(power_w) + 30.0


def thermal_occupancy(temperature_k: float, omega: float) -> float:
    """Bose-Einstein occupation of a mode at angular frequency ``omega``."""
    if temperature_k <= 0.0:
        return 0.0
    return 1.0 / math.expm1(hbar * omega / (k_B * temperature_k))


@dataclass(frozen=True)
class AtomParams:
    """Two-level scatterer strongly coupled to an open line.

    ``gamma10`` is the full energy relaxation rate, split equally between
    the left- and right-moving modes of the line. ``n_thermal`` is the
    photon occupancy of the line at the transition frequency; zero means
    the line is in vacuum.
    """

    omega01: float
    gamma10: float
    gamma_phi: float = 0.0
    n_thermal: float = 0.0

    def __post_init__(self):
        if not self.omega01 > 0:
            raise ModelError(f"omega01 must be positive, got {self.omega01}")
        for name in ("gamma10", "gamma_phi", "n_thermal"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ModelError(f"{name} must be finite and >= 0, got {value}")
        if not self.gamma2 > 0:
            raise ModelError("total coherence decay gamma10/2 + gamma_phi must be > 0")

    @property
    def gamma2(self) -> float:
        """Coherence (off-diagonal) decay rate, Gamma10/2 + Gamma_phi."""
        return 0.5 * self.gamma10 + self.gamma_phi

    @classmethod
    def from_lab(cls, f01_ghz: float, gamma10_mhz: float, gamma_phi_mhz: float = 0.0,
                 temperature_mk: float | None = None) -> "AtomParams":
        omega01 = TWO_PI * f01_ghz * 1e9
        n_th = 0.0
        if temperature_mk:
            n_th = thermal_occupancy(temperature_mk * 1e-3, omega01)
        return cls(omega01, TWO_PI * gamma10_mhz * 1e6, TWO_PI * gamma_phi_mhz * 1e6, n_th)

    def with_temperature(self, temperature_k: float) -> "AtomParams":
        return AtomParams(self.omega01, self.gamma10, self.gamma_phi,
                          thermal_occupancy(temperature_k, self.omega01))


# Device extracted from the resonant transmission data.
DEFAULT_ATOM = AtomParams.from_lab(5.12, 41.0, 1.0)
DEFAULT_TEMPERATURE_K = 0.050


@dataclass(frozen=True)
class DriveSpec:
    """Incident coherent tone at the atom plane.

    ``gamma10`` fixes the photon-number and Rabi calibration. The Rabi
    frequency follows from input-output theory with the atom radiating
    ``gamma10/2`` into each direction: ``omega_rabi**2 = 2*gamma10*flux``
    with ``flux = P/(hbar*omega_p)``, so ``omega_rabi = gamma10*sqrt(N/pi)``.
    """

    omega_p: float
    power_dbm: float
    gamma10: float

    def __post_init__(self):
        if not self.omega_p > 0:
            raise ModelError(f"omega_p must be positive, got {self.omega_p}")
        if not self.gamma10 > 0:
            raise ModelError("drive calibration needs gamma10 > 0")
        if math.isnan(self.power_dbm) or self.power_dbm == math.inf:
            raise ModelError(f"invalid power {self.power_dbm} dBm")

    @property
    def power_watts(self) -> float:
        return dbm_to_watts(self.power_dbm)

    @property
    def photon_flux(self) -> float:
        """Incident photons per second."""
        return self.power_watts / (hbar * self.omega_p)

    @property
    def n_photons(self) -> float:
        """Mean incident photons per interaction time 2*pi/gamma10."""
        return TWO_PI * self.power_watts / (hbar * self.omega_p * self.gamma10)

    @property
    def omega_rabi(self) -> float:
        return math.sqrt(2.0 * self.gamma10 * self.photon_flux)

    @property
    def amplitude(self) -> float:
        """Real input amplitude, in sqrt(photons/s)."""
        return math.sqrt(self.photon_flux)

    def detuning(self, atom: AtomParams) -> float:
        return self.omega_p - atom.omega01

    @classmethod
    def from_power(cls, atom: AtomParams, power_dbm: float, detuning: float = 0.0) -> "DriveSpec":
        return cls(atom.omega01 + detuning, power_dbm, atom.gamma10)

    @classmethod
    def from_watts(cls, atom: AtomParams, power_w: float, detuning: float = 0.0) -> "DriveSpec":
        return cls(atom.omega01 + detuning, watts_to_dbm(power_w), atom.gamma10)

    @classmethod
    def from_photon_number(cls, atom: AtomParams, n: float, detuning: float = 0.0) -> "DriveSpec":
        omega_p = atom.omega01 + detuning
        power = n * hbar * omega_p * atom.gamma10 / TWO_PI
        return cls(omega_p, watts_to_dbm(power), atom.gamma10)

    @classmethod
    def from_rabi(cls, atom: AtomParams, omega_rabi: float, detuning: float = 0.0) -> "DriveSpec":
        omega_p = atom.omega01 + detuning
        flux = omega_rabi ** 2 / (2.0 * atom.gamma10)
        return cls(omega_p, watts_to_dbm(flux * hbar * omega_p), atom.gamma10)


@dataclass(frozen=True)
class FilterMode:
    """Single-mode resonator standing in for the digital filter.

    ``kappa`` is the energy decay rate; a bandwidth BW maps to
    ``kappa = 2*pi*BW``, which gives the thermal signature
    ``1 + exp(-2*pi*BW*|tau|)``. ``tap`` is the fraction of the output
    flux routed into the filter (the rest is discarded through a beam
    splitter with a vacuum port); normalized correlations do not depend on it.
    """

    kappa: float
    n_max: int = 4
    tap: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ModelError(f"filter kappa must be positive, got {self.kappa}")
        if self.n_max < 4:
            raise ModelError(f"n_max must be >= 4, got {self.n_max}")
        if not 0.0 < self.tap <= 1.0:
            raise ModelError(f"tap must lie in (0, 1], got {self.tap}")

    @property
    def bandwidth(self) -> float:
        """Bandwidth in Hz."""
        return self.kappa / TWO_PI

    @classmethod
    def from_bandwidth(cls, bw_hz: float, n_max: int = 4, tap: float = 1.0) -> "FilterMode":
        return cls(TWO_PI * bw_hz, n_max, tap)
