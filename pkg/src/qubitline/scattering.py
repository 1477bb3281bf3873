"""Input-output observables of the driven atom: coherent transmission and
reflection, the resonance-fluorescence (Mollow) spectrum and the split of
reflected power into elastic and in-band inelastic parts."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import hbar
from scipy.integrate import quad
from scipy.optimize import curve_fit

from qubitline.errors import ModelError
from qubitline.params import TWO_PI, AtomParams, DriveSpec
from qubitline.quantum import (build_atom_liouvillian, dag, line_coupling, steady_state,
                               Liouvillian, DensityOperator)

SWEEP_COLUMNS = ("power_dbm", "N", "T", "R", "elastic_frac", "inelastic_in_band_frac", "g1",
                 "bw_mhz")


@dataclass(frozen=True)
class ScatterResult:
    """Steady-state scattering of one drive point. Fluxes in photons/s."""

    transmittance: float
    reflectance: float
    incident_flux: float
    transmitted_flux: float
    transmitted_elastic_flux: float
    reflected_elastic_flux: float
    reflected_inelastic_flux: float
    transmission_amplitude: complex
    reflection_amplitude: complex

    @property
    def reflected_flux(self) -> float:
        return self.reflected_elastic_flux + self.reflected_inelastic_flux

    @property
    def elastic_fraction(self) -> float:
        """Coherent share of the reflected flux."""
        total = self.reflected_flux
        return self.reflected_elastic_flux / total if total > 0 else 1.0


@dataclass(frozen=True)
class Lorentzian:
    """One line of the triplet; ``dispersion`` weights the odd part
    ``(nu - center)/pi/((nu - center)**2 + hwhm**2)``, which carries no power."""

    center: float  # rad/s, absolute
    hwhm: float  # rad/s
    weight: float  # W
    dispersion: float = 0.0  # W


@dataclass(frozen=True, eq=False)
class MollowSpectrum:
    """Resonance fluorescence emitted into both directions of the line.

    ``density`` is in W per (rad/s) on the absolute frequency grid ``omega``;
    the elastic delta component at the drive frequency is reported
    separately as ``elastic_weight``. ``components`` holds the fitted
    triplet (center, sidebands) or ``None`` when the fit failed or the
    triplet is unresolved.
    """

    omega: np.ndarray
    density: np.ndarray
    elastic_weight: float
    inelastic_weight: float
    omega_p: float
    omega_rabi: float
    components: tuple | None
    fit_ok: bool
    fit_residual: float

    @property
    def total_weight(self) -> float:
        return self.elastic_weight + self.inelastic_weight


@dataclass(frozen=True)
class CoherenceReport:
    """Reflected power (W, atom plane) seen within a measurement bandwidth."""

    g1: float
    elastic_power: float
    total_power: float
    inelastic_power: float
    bw: float
    window: str


class _Fluorescence:
    """Steady state and fluctuation spectrum of the atomic dipole."""

    def __init__(self, atom: AtomParams, drive: DriveSpec):
        self.atom = atom
        self.drive = drive
        self.L: Liouvillian = build_atom_liouvillian(atom, drive)
        self.rho: DensityOperator = steady_state(self.L)
        sm = self.L.ops["sm"]
        self.sm_mean = self.rho.expect(sm)
        self.excited = self.rho.expect(dag(sm) @ sm).real
        r = self.rho.matrix
        self._x = (sm @ r - self.sm_mean * r).reshape(-1)
        self._obs = dag(sm).T.reshape(-1)
        self._eye = np.eye(self.L.generator.shape[0])
        # Shift the stationary eigenvalue away from zero; harmless on the
        # traceless subspace where the fluctuation vector lives.
        shift = np.linalg.norm(self.L.generator)
        self._gen = self.L.generator - shift * np.outer(r.reshape(-1), np.eye(r.shape[0]).reshape(-1))

    @property
    def coherent_fraction_weight(self) -> float:
        return abs(self.sm_mean) ** 2

    def dipole_spectrum(self, nu) -> np.ndarray:
        """Normalized inelastic dipole spectrum vs offset ``nu`` from the drive.

        Real part of the one-sided Fourier transform of
        ``<d sigma_+(tau) d sigma_-(0)>``, evaluated through the resolvent of
        the generator; integrates to ``<s+ s-> - |<s->|**2``.
        """
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        mats = self._gen[None, :, :] - 1j * nu[:, None, None] * self._eye[None]
        sol = np.linalg.solve(mats, np.broadcast_to(self._x, (nu.size, self._x.size))[..., None])
        val = -(sol[..., 0] @ self._obs)
        return val.real / math.pi

    def band_integral(self, half_width: float | None = None, kappa: float | None = None) -> float:
        """Integral of ``dipole_spectrum`` over a brick-wall band or a Lorentzian window."""
        scale = self.atom.gamma10 + self.drive.omega_rabi + abs(self.drive.detuning(self.atom))
        marks = sorted({0.0, self.drive.omega_rabi, -self.drive.omega_rabi,
                        -self.drive.detuning(self.atom)})

        if kappa is not None:
            def f(v):
                return self.dipole_spectrum(v)[0] / (1.0 + (2.0 * v / kappa) ** 2)
        else:
            def f(v):
                return self.dipole_spectrum(v)[0]

        def piece(a, b):
            pts = [m for m in marks if a < m < b]
            val, _ = quad(f, a, b, points=pts or None, limit=400, epsabs=0.0, epsrel=1e-11)
            return val

        def tail(cut):
            # nu = cut/u maps [cut, inf) onto (0, 1]; the integrand stays finite.
            def g(u):
                return (f(cut / u) + f(-cut / u)) * cut / u ** 2 if u > 0 else 0.0
            val, _ = quad(g, 0.0, 1.0, limit=400, epsabs=0.0, epsrel=1e-11)
            return val

        if half_width is None or math.isinf(half_width):
            cut = 20.0 * scale
            return piece(-cut, cut) + tail(cut)
        return piece(-half_width, half_width)


def transmittance(atom: AtomParams, drive: DriveSpec) -> ScatterResult:
    """Coherent transmission and reflection coefficients and output fluxes."""
    if drive.photon_flux <= 0:
        raise ModelError("transmittance needs a drive with positive power")
    fl = _Fluorescence(atom, drive)
    c = line_coupling(atom)
    alpha = drive.amplitude
    scattered = c * fl.sm_mean
    r = scattered / alpha
    t = 1.0 + r
    half = 0.5 * atom.gamma10
    refl_total = half * fl.excited
    refl_el = abs(scattered) ** 2
    trans_total = alpha ** 2 + half * fl.excited + 2.0 * (alpha * scattered).real
    return ScatterResult(
        transmittance=abs(t) ** 2,
        reflectance=abs(r) ** 2,
        incident_flux=alpha ** 2,
        transmitted_flux=trans_total,
        transmitted_elastic_flux=abs(alpha + scattered) ** 2,
        reflected_elastic_flux=refl_el,
        reflected_inelastic_flux=refl_total - refl_el,
        transmission_amplitude=complex(t),
        reflection_amplitude=complex(r),
    )


def elastic_vs_total_power(atom: AtomParams, drive: DriveSpec, bw: float,
                           window: str = "brickwall") -> CoherenceReport:
    """Elastic (phase-sensitive) vs total (phase-insensitive) reflected power.

    ``bw`` in Hz, centered on the drive; ``math.inf`` captures the whole
    triplet. ``window`` is ``"brickwall"`` or ``"lorentzian"`` (single pole,
    ``kappa = 2*pi*bw``).
    """
    if not bw > 0:
        raise ModelError(f"bandwidth must be positive, got {bw}")
    fl = _Fluorescence(atom, drive)
    half = 0.5 * atom.gamma10
    if math.isinf(bw):
        inel = fl.excited - fl.coherent_fraction_weight
    elif window == "brickwall":
        inel = fl.band_integral(half_width=math.pi * bw)
    elif window == "lorentzian":
        inel = fl.band_integral(kappa=TWO_PI * bw)
    else:
        raise ModelError(f"unknown window {window!r}")
    energy = hbar * drive.omega_p
    elastic = half * fl.coherent_fraction_weight * energy
    inelastic = half * max(inel, 0.0) * energy
    total = elastic + inelastic
    return CoherenceReport(elastic / total if total > 0 else 1.0, elastic, total, inelastic, bw,
                           window)


def spectral_integral(atom: AtomParams, drive: DriveSpec) -> tuple[float, float]:
    """Emitted power (W) from integrating the full spectrum numerically, and
    the same quantity from the steady state, ``gamma10 * <s+ s-> * hbar*omega_p``."""
    fl = _Fluorescence(atom, drive)
    energy = hbar * drive.omega_p
    numeric = atom.gamma10 * energy * (fl.coherent_fraction_weight + fl.band_integral())
    return numeric, atom.gamma10 * energy * fl.excited


def _triplet(nu, *p):
    out = 0.0
    for i in range(3):
        c, h, w, d = p[4 * i:4 * i + 4]
        out = out + (w * h + d * (nu - c)) / math.pi / ((nu - c) ** 2 + h ** 2)
    return out


def mollow_spectrum(atom: AtomParams, drive: DriveSpec, omega_grid) -> MollowSpectrum:
    """Inelastic fluorescence spectrum on an absolute frequency grid (rad/s)."""
    omega = np.asarray(omega_grid, dtype=float)
    fl = _Fluorescence(atom, drive)
    gamma = atom.gamma10
    energy = hbar * drive.omega_p
    nu = omega - drive.omega_p
    norm_density = fl.dipole_spectrum(nu)
    density = gamma * energy * norm_density
    elastic = gamma * energy * fl.coherent_fraction_weight
    inelastic = gamma * energy * (fl.excited - fl.coherent_fraction_weight)

    omega_r = drive.omega_rabi
    components, fit_ok, resid = None, False, math.inf
    if omega_r > gamma and omega.size >= 12:
        g2 = atom.gamma2
        split = math.sqrt(max(omega_r ** 2 + drive.detuning(atom) ** 2
                              - ((gamma - g2) / 2.0) ** 2, (0.5 * omega_r) ** 2))
        side_h = 0.5 * (gamma + g2)
        w = max(inelastic, 1e-300)
        p0 = [0.0, g2, w / 2, 0.0, split, side_h, w / 4, 0.0, -split, side_h, w / 4, 0.0]
        scale = np.array([omega_r, omega_r, w, w] * 3)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                popt, _ = curve_fit(lambda x, *p: _triplet(x, *(np.array(p) * scale)),
                                    nu, density, p0=np.array(p0) / scale, maxfev=20000)
            popt = popt * scale
            peak = density.max()
            resid = float(np.max(np.abs(_triplet(nu, *popt) - density)) / peak) if peak > 0 else math.inf
            fit_ok = resid <= 0.05
        except (RuntimeError, ValueError):
            fit_ok = False
        if fit_ok:
            comps = [Lorentzian(drive.omega_p + popt[4 * i], abs(popt[4 * i + 1]),
                                popt[4 * i + 2], popt[4 * i + 3]) for i in range(3)]
            components = tuple(sorted(comps, key=lambda c: c.center))
    return MollowSpectrum(omega, density, elastic, inelastic, drive.omega_p, omega_r,
                          components, fit_ok, resid)


def sweep_table(atom: AtomParams, powers_dbm, bw: float, window: str = "brickwall",
                detuning: float = 0.0) -> list[dict]:
    """Rows of the power sweep table (one per incident power)."""
    rows = []
    for p in powers_dbm:
        drive = DriveSpec.from_power(atom, p, detuning)
        s = transmittance(atom, drive)
        rep = elastic_vs_total_power(atom, drive, bw, window)
        total_inel = s.reflected_inelastic_flux * hbar * drive.omega_p
        rows.append({
            "power_dbm": p,
            "N": drive.n_photons,
            "T": s.transmittance,
            "R": s.reflectance,
            "elastic_frac": s.elastic_fraction,
            "inelastic_in_band_frac": rep.inelastic_power / total_inel if total_inel > 0 else 0.0,
            "g1": rep.g1,
            "bw_mhz": bw / 1e6,
        })
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k])
                        for k in SWEEP_COLUMNS})
