"""Second-order correlation g2(tau) of the scattered fields.

Ideal (infinite bandwidth) statistics come straight from the atom; finite
detection bandwidth is modeled by cascading the output into a single-mode
filter resonator; trigger jitter is a three-point average over +-10 ns.
Library functions take SI units (s, Hz); CSV output uses ns and MHz.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from qubitline.errors import GridError, ModelError, TruncationError, UndefinedTraceError
from qubitline.params import AtomParams, DriveSpec, FilterMode
from qubitline.quantum import (build_atom_liouvillian, build_cascaded_liouvillian, dag,
                               normalize_port, output_field, steady_state, two_time_correlator)

JITTER_SHIFT = 10e-9
TRACE_COLUMNS = ("tau_ns", "g2", "port", "bw_mhz", "power_dbm", "jitter")

# Mean filter occupancy targeted when the output is tapped before the filter.
_TAP_OCCUPANCY = 0.02
_MAX_FOCK = 24


def default_tau_grid(step: float = 10e-9, span: float = 400e-9) -> np.ndarray:
    """Symmetric delay grid, by default 10 ns steps over +-400 ns."""
    n = int(round(span / step))
    return np.arange(-n, n + 1) * step


@dataclass(frozen=True, eq=False)
class CorrelationTrace:
    tau: np.ndarray  # s
    g2: np.ndarray
    port: str
    bw: float = math.inf  # Hz
    jitter_applied: bool = False
    power_dbm: float = math.nan
    n_photons: float = math.nan
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def tau_ns(self) -> np.ndarray:
        return self.tau * 1e9

    def at(self, tau: float) -> float:
        i = int(np.argmin(np.abs(self.tau - tau)))
        return float(self.g2[i])

    @property
    def g2_zero(self) -> float:
        return self.at(0.0)

    def rows(self):
        bw_mhz = "inf" if math.isinf(self.bw) else f"{self.bw / 1e6:.10g}"
        for t, g in zip(self.tau_ns, self.g2):
            yield {"tau_ns": f"{t:.6g}", "g2": f"{g:.12g}", "port": self.port,
                   "bw_mhz": bw_mhz, "power_dbm": f"{self.power_dbm:.6g}",
                   "jitter": int(self.jitter_applied)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            w.writeheader()
            w.writerows(self.rows())


def _on_abs_grid(tau_grid, fn) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``fn`` on the distinct |tau| values and map back to the grid."""
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or tau.size == 0:
        raise GridError("tau grid must be a non-empty 1-D sequence")
    abs_tau = np.abs(tau)
    uniq, inverse = np.unique(abs_tau, return_inverse=True)
    return tau, np.asarray(fn(uniq))[inverse]


def _drive_meta(drive: DriveSpec) -> dict:
    return {"power_dbm": drive.power_dbm, "n_photons": drive.n_photons}


def g2_ideal(atom: AtomParams, drive: DriveSpec, port: str, tau_grid) -> CorrelationTrace:
    """Infinite-bandwidth g2 of the reflected or transmitted field.

    The reflected field is proportional to sigma_minus; the transmitted field
    is the coherent carrier plus the forward-scattered dipole field.
    Input noise of a thermal line is not added to the outputs here.
    """
    port = normalize_port(port)
    L = build_atom_liouvillian(atom, drive)
    rho = steady_state(L)
    b = output_field(atom, drive, port, L.ops["sm"])
    bd = dag(b)
    flux = rho.expect(bd @ b).real
    if flux < 1e-14 * atom.gamma10:
        raise UndefinedTraceError(f"mean {port} flux {flux:.3e} photons/s is numerically zero")

    def g2(abs_tau):
        return two_time_correlator(L, bd, b, abs_tau, mid=bd @ b, rho=rho).real / flux ** 2

    tau, values = _on_abs_grid(tau_grid, g2)
    return CorrelationTrace(tau, values, port, math.inf, False, **_drive_meta(drive),
                            meta={"flux": flux})


def _filter_setup(atom: AtomParams, drive: DriveSpec, port: str, kappa: float):
    """Tap fraction and initial truncation for the cascaded filter."""
    L = build_atom_liouvillian(atom, drive)
    rho = steady_state(L)
    b = output_field(atom, drive, port, L.ops["sm"])
    flux = rho.expect(dag(b) @ b).real
    if atom.n_thermal > 0:
        occupancy = 4.0 * flux / kappa + atom.n_thermal
        ratio = occupancy / (1.0 + occupancy)
        n_max = max(6, int(math.ceil(math.log(1e-5) / math.log(ratio))) + 2) if ratio > 0 else 6
        return 1.0, min(n_max, _MAX_FOCK)
    if flux <= 0:
        return 1.0, 4
    return min(1.0, _TAP_OCCUPANCY * kappa / (4.0 * flux)), 4


def _filtered_moments(atom, drive, port, filt, abs_tau):
    L = build_cascaded_liouvillian(atom, drive, filt, port)
    rho = steady_state(L)
    a = L.ops["a"]
    ad = dag(a)
    n = rho.expect(ad @ a).real
    top = float(np.trace(L.top_projector @ rho.matrix).real)
    g2n = None
    if abs_tau is not None:
        g2n = two_time_correlator(L, ad, a, abs_tau, mid=ad @ a, rho=rho).real
    return n, g2n, top


def g2_filtered(atom: AtomParams, drive: DriveSpec, port: str, bw: float, tau_grid,
                n_max: int | None = None, tap: float | None = None) -> CorrelationTrace:
    """g2 of the output after a single-mode filter of bandwidth ``bw`` (Hz).

    With a thermal line the background occupancy of the filter (drive off)
    is subtracted from the mean in the normalization, mirroring the
    estimator's noise subtraction.
    """
    port = normalize_port(port)
    if not bw > 0:
        raise ModelError(f"bandwidth must be positive, got {bw}")
    kappa = 2.0 * math.pi * bw
    auto_tap, auto_n = _filter_setup(atom, drive, port, kappa)
    tap = auto_tap if tap is None else tap
    n_max = auto_n if n_max is None else n_max

    holder = {}

    def g2(abs_tau):
        nonlocal n_max
        while True:
            filt = FilterMode(kappa, n_max, tap)
            try:
                n, g2n, top = _filtered_moments(atom, drive, port, filt, abs_tau)
            except TruncationError:
                if n_max >= _MAX_FOCK:
                    raise
                n_max = min(_MAX_FOCK, n_max + 4)
                continue
            if top > 1e-4 and n_max < _MAX_FOCK:
                n_max = min(_MAX_FOCK, n_max + 4)
                continue
            break
        n0 = 0.0
        if atom.n_thermal > 0:
            off = DriveSpec(drive.omega_p, -math.inf, drive.gamma10)
            n0, _, _ = _filtered_moments(atom, off, port, filt, None)
        net = n - n0
        if net < 1e-14:
            raise UndefinedTraceError(f"filtered {port} occupancy {net:.3e} is numerically zero")
        holder.update(n=n, n_background=n0, top_population=top, n_max=n_max, tap=tap)
        return 1.0 + (g2n - n * n) / net ** 2

    tau, values = _on_abs_grid(tau_grid, g2)
    return CorrelationTrace(tau, values, port, bw, False, **_drive_meta(drive), meta=holder)


def apply_trigger_jitter(trace: CorrelationTrace, shift: float = JITTER_SHIFT) -> CorrelationTrace:
    """Replace g2(tau) by the mean of g2(tau - shift), g2(tau), g2(tau + shift).

    Points past the end of the grid take the edge value; negative delays use
    g2(-tau) = g2(tau).
    """
    tau = np.asarray(trace.tau, dtype=float)
    abs_tau = np.abs(tau)
    uniq, first = np.unique(abs_tau, return_index=True)
    values = np.asarray(trace.g2)[first]
    tmax = uniq[-1]
    spacing = np.min(np.diff(uniq)) if uniq.size > 1 else shift
    tol = 1e-6 * spacing

    def lookup(t):
        t = abs(t)
        if t > tmax + tol:
            return values[-1]
        j = int(np.searchsorted(uniq, t - tol))
        if j >= uniq.size or abs(uniq[j] - t) > tol:
            raise GridError(f"grid spacing does not divide the jitter shift {shift:g} s "
                            f"(no grid point at {t:g} s)")
        return values[j]

    out = np.array([(lookup(t - shift) + lookup(t) + lookup(t + shift)) / 3.0 for t in tau])
    return replace(trace, g2=out, jitter_applied=True)


def g2_reference(kind: str, bw: float, tau_grid) -> CorrelationTrace:
    """Closed-form thermal (single-pole filtered) and coherent references."""
    tau = np.asarray(tau_grid, dtype=float)
    if kind == "thermal":
        if not bw > 0:
            raise ModelError("thermal reference needs bw > 0")
        g2 = 1.0 + np.exp(-2.0 * math.pi * bw * np.abs(tau))
    elif kind == "coherent":
        g2 = np.ones_like(tau)
    else:
        raise ModelError(f"unknown reference kind {kind!r}")
    return CorrelationTrace(tau, g2, kind, bw, False)


def theory_trace(atom: AtomParams, drive: DriveSpec, port: str, bw: float | None, tau_grid,
                 jitter: bool = True) -> CorrelationTrace:
    """Filtered (or ideal when ``bw`` is None/inf) trace with optional jitter."""
    if bw is None or math.isinf(bw):
        trace = g2_ideal(atom, drive, port, tau_grid)
    else:
        trace = g2_filtered(atom, drive, port, bw, tau_grid)
    return apply_trigger_jitter(trace) if jitter else trace


def g2_zero_sweep(atom: AtomParams, powers_dbm, port: str, bw: float | None,
                  jitter: bool = True) -> np.ndarray:
    """g2(0) versus incident power, as in a power-dependence inset."""
    grid = np.array([0.0, JITTER_SHIFT]) if jitter else np.array([0.0])
    out = []
    for p in powers_dbm:
        drive = DriveSpec.from_power(atom, p)
        out.append(theory_trace(atom, drive, port, bw, grid, jitter).g2_zero)
    return np.array(out)
