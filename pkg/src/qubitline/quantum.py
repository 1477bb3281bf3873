"""Lindblad generators, stationary states and quantum-regression correlators
for the two-level atom, optionally cascaded into a single filter mode.

Superoperators act on row-major vectorized density matrices, so that
``vec(A @ X @ B) == kron(A, B.T) @ vec(X)``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from qubitline.errors import (DegenerateSteadyStateError, IntegrationError, ModelError,
                              RWAViolationError, TruncationError)
from qubitline.params import AtomParams, DriveSpec, FilterMode

TRUNCATION_LIMIT = 1e-3

PORTS = {"reflected": "reflected", "reflection": "reflected", "r": "reflected",
         "transmitted": "transmitted", "transmission": "transmitted", "t": "transmitted"}


def normalize_port(port: str) -> str:
    try:
        return PORTS[port.lower()]
    except (KeyError, AttributeError):
        raise ModelError(f"unknown port {port!r}; use 'reflected' or 'transmitted'") from None


# -- operators ---------------------------------------------------------------

def sigma_minus() -> np.ndarray:
    """Lowering operator, basis (|0>, |1>)."""
    return np.array([[0, 1], [0, 0]], dtype=complex)


def sigma_z() -> np.ndarray:
    return np.diag([-1.0, 1.0]).astype(complex)


def destroy(n_levels: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_levels)), 1).astype(complex)


def dag(op: np.ndarray) -> np.ndarray:
    return op.conj().T


def spre(op: np.ndarray) -> np.ndarray:
    return np.kron(op, np.eye(op.shape[0]))


def spost(op: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(op.shape[0]), op.T)


def dissipator(c: np.ndarray) -> np.ndarray:
    cdc = dag(c) @ c
    return np.kron(c, c.conj()) - 0.5 * spre(cdc) - 0.5 * spost(cdc)


def lindbladian(hamiltonian: np.ndarray, c_ops) -> np.ndarray:
    gen = -1j * (spre(hamiltonian) - spost(hamiltonian))
    for c in c_ops:
        gen = gen + dissipator(c)
    return gen


def thermal_channel(c: np.ndarray, n_thermal: float) -> list[np.ndarray]:
    """Collapse operators for a channel fed by white thermal noise."""
    if n_thermal <= 0:
        return [c]
    return [math.sqrt(n_thermal + 1.0) * c, math.sqrt(n_thermal) * dag(c)]


def line_coupling(atom: AtomParams) -> complex:
    """Amplitude coupling of the atom to one propagation direction.

    The scattered field in each direction is ``line_coupling * sigma_minus``,
    so the transmitted field is ``alpha + line_coupling * sigma_minus``.
    """
    return -1j * math.sqrt(atom.gamma10 / 2.0)


def output_field(atom: AtomParams, drive: DriveSpec, port: str, sm: np.ndarray) -> np.ndarray:
    """Output mode operator (sqrt(photons/s)) of the selected port."""
    port = normalize_port(port)
    b = line_coupling(atom) * sm
    if port == "transmitted":
        b = b + drive.amplitude * np.eye(sm.shape[0])
    return b


# -- states and generators ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityOperator:
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.trace(op @ self.matrix))

    def check(self, hermitian_tol=1e-10, trace_tol=1e-10, positivity_tol=1e-9) -> None:
        """Raise ``ValueError`` unless this is a valid density matrix."""
        m = self.matrix
        asym = np.max(np.abs(m - dag(m)))
        if asym >= hermitian_tol:
            raise ValueError(f"not Hermitian (asymmetry {asym:.2e})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"trace {tr!r} differs from 1")
        lam = np.linalg.eigvalsh(0.5 * (m + dag(m)))[0]
        if lam <= -positivity_tol:
            raise ValueError(f"negative eigenvalue {lam:.2e}")


@dataclass(frozen=True, eq=False)
class Liouvillian:
    """Lindblad generator in the frame rotating at ``frame_frequency``.

    ``ops`` holds the named Hilbert-space operators the generator was built
    from (``sm``, ``sz`` and, for the cascaded system, ``a``).
    """

    generator: np.ndarray
    dims: tuple
    frame_frequency: float
    hamiltonian: np.ndarray
    c_ops: tuple
    ops: dict = field(default_factory=dict)
    top_projector: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        d = self.dim
        return (self.generator @ rho.reshape(-1)).reshape(d, d)


def _atom_hamiltonian(atom: AtomParams, drive: DriveSpec) -> np.ndarray:
    delta = drive.detuning(atom)
    if abs(delta) > atom.omega01 / 10.0:
        raise RWAViolationError(
            f"|omega_p - omega01| = {abs(delta):.3e} rad/s exceeds omega01/10 = "
            f"{atom.omega01 / 10:.3e} rad/s; rotating-wave approximation invalid")
    sm = sigma_minus()
    sp = dag(sm)
    return -delta * sp @ sm + 0.5 * drive.omega_rabi * (sp + sm)


def build_atom_liouvillian(atom: AtomParams, drive: DriveSpec) -> Liouvillian:
    """Driven two-level atom radiating into both directions of the line."""
    h = _atom_hamiltonian(atom, drive)
    sm, sz = sigma_minus(), sigma_z()
    c_line = line_coupling(atom) * sm
    c_ops = []
    for _ in range(2):
        c_ops += thermal_channel(c_line, atom.n_thermal)
    if atom.gamma_phi > 0:
        c_ops.append(math.sqrt(atom.gamma_phi / 2.0) * sz)
    return Liouvillian(lindbladian(h, c_ops), (2,), drive.omega_p, h, tuple(c_ops),
                       {"sm": sm, "sz": sz})


def build_cascaded_liouvillian(atom: AtomParams, drive: DriveSpec, filt: FilterMode,
                               port: str) -> Liouvillian:
    """Atom whose output port feeds a single-mode filter resonator.

    The filter sits at the drive frequency and couples unidirectionally to
    the chosen output. On the transmission port the coherent carrier
    reaches the filter together with the forward-scattered field.
    """
    port = normalize_port(port)
    if atom.n_thermal > 0 and filt.tap < 1.0:
        raise ModelError("a partial filter tap is only exact for a vacuum line; use tap=1")
    nf = filt.n_max + 1
    i2, i_f = np.eye(2), np.eye(nf)
    sm = np.kron(sigma_minus(), i_f)
    sz = np.kron(sigma_z(), i_f)
    a = np.kron(i2, destroy(nf))
    c = line_coupling(atom)

    h = np.kron(_atom_hamiltonian(atom, drive), i_f)
    src = math.sqrt(filt.tap) * c * sm
    target = math.sqrt(filt.kappa) * a
    h = h + (dag(target) @ src - dag(src) @ target) / 2j
    if port == "transmitted":
        alpha = drive.amplitude * math.sqrt(filt.tap * filt.kappa)
        h = h + 1j * alpha * (a - dag(a))

    n_th = atom.n_thermal
    c_ops = thermal_channel(src + target, n_th)
    if filt.tap < 1.0:
        c_ops += thermal_channel(math.sqrt(1.0 - filt.tap) * c * sm, n_th)
    c_ops += thermal_channel(c * sm, n_th)
    if atom.gamma_phi > 0:
        c_ops.append(math.sqrt(atom.gamma_phi / 2.0) * sz)

    top = np.zeros((nf, nf))
    top[-1, -1] = 1.0
    return Liouvillian(lindbladian(h, c_ops), (2, nf), drive.omega_p, h, tuple(c_ops),
                       {"sm": sm, "sz": sz, "a": a}, np.kron(i2, top))


def build_filter_liouvillian(filt: FilterMode, n_thermal: float) -> Liouvillian:
    """Filter mode alone, fed by broadband thermal noise of occupancy ``n_thermal``."""
    nf = filt.n_max + 1
    a = destroy(nf)
    c_ops = thermal_channel(math.sqrt(filt.kappa) * a, n_thermal)
    h = np.zeros((nf, nf), dtype=complex)
    top = np.zeros((nf, nf))
    top[-1, -1] = 1.0
    return Liouvillian(lindbladian(h, c_ops), (nf,), 0.0, h, tuple(c_ops), {"a": a}, top)


# -- solvers -----------------------------------------------------------------

def check_truncation(L: Liouvillian, rho: np.ndarray) -> float:
    if L.top_projector is None:
        return 0.0
    pop = float(np.trace(L.top_projector @ rho).real)
    if pop > TRUNCATION_LIMIT:
        raise TruncationError(
            f"top Fock level population {pop:.2e} exceeds {TRUNCATION_LIMIT:.0e}; raise n_max")
    return pop


def steady_state(L: Liouvillian) -> DensityOperator:
    """Unique stationary state from the null space of the generator."""
    d = L.dim
    gen = L.generator
    _, s, vh = np.linalg.svd(gen)
    if s[0] == 0.0 or s[-2] <= 1e-8 * s[0]:
        raise DegenerateSteadyStateError(
            f"second-smallest singular value {s[-2]:.3e} below 1e-8*||L|| = {1e-8 * s[0]:.3e}")
    # Refine the null vector with the trace condition appended as an extra row.
    scale = s[0]
    aug = np.vstack([gen, scale * np.eye(d).reshape(1, -1)])
    rhs = np.zeros(d * d + 1, dtype=complex)
    rhs[-1] = scale
    x, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    rho = x.reshape(d, d)
    rho = 0.5 * (rho + dag(rho))
    rho /= np.trace(rho).real
    check_truncation(L, rho)
    return DensityOperator(rho)


def evolve(L: Liouvillian, rho0: DensityOperator, t: float, rtol: float = 1e-9,
           atol: float = 1e-12) -> DensityOperator:
    """Integrate ``d rho/dt = L rho`` from 0 to ``t`` with an adaptive Runge-Kutta."""
    if t < 0:
        raise ValueError(f"evolution time must be >= 0, got {t}")
    if t == 0:
        return DensityOperator(rho0.matrix.copy())
    d = L.dim
    gen = L.generator
    sol = solve_ivp(lambda _t, y: gen @ y, (0.0, t), rho0.matrix.reshape(-1).astype(complex),
                    method="DOP853", rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(f"integration failed at t = {sol.t[-1]:.6e} s: {sol.message}")
    rho = sol.y[:, -1].reshape(d, d)
    check_truncation(L, rho)
    return DensityOperator(rho)


def _propagate(L: Liouvillian, x: np.ndarray, observable: np.ndarray, tau_grid) -> np.ndarray:
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or np.any(tau < 0) or np.any(np.diff(tau) < 0):
        raise ValueError("tau grid must be a non-negative, non-decreasing 1-D sequence")
    gen = L.generator
    obs = observable.T.reshape(-1)
    v = x.reshape(-1).astype(complex)
    cache: dict[int, np.ndarray] = {}
    out = np.empty(tau.size, dtype=complex)
    t_prev = 0.0
    for i, t in enumerate(tau):
        dt = t - t_prev
        if dt > 0:
            key = int(round(dt * 1e21))
            prop = cache.get(key)
            if prop is None:
                prop = sla.expm(gen * dt)
                cache[key] = prop
            v = prop @ v
        out[i] = obs @ v
        t_prev = t
    return out


def two_time_correlator(L: Liouvillian, A: np.ndarray, B: np.ndarray, tau_grid,
                        mid: np.ndarray | None = None,
                        rho: DensityOperator | None = None) -> np.ndarray:
    """Stationary two-time correlators by the quantum regression theorem.

    Without ``mid`` this returns ``<A(tau) B(0)>``. With ``mid`` it returns
    the ordered fourth-moment form ``<A(0) M(tau) B(0)>``, e.g.
    ``A = sigma_plus, M = sigma_plus sigma_minus, B = sigma_minus`` for G2.
    """
    if rho is None:
        rho = steady_state(L)
    r = rho.matrix
    if mid is None:
        return _propagate(L, B @ r, A, tau_grid)
    return _propagate(L, B @ r @ A, mid, tau_grid)


# -- plain-text snapshots ----------------------------------------------------

def dump_snapshot(matrix: np.ndarray, frame_frequency: float = 0.0) -> str:
    """Column-major ``re im`` pairs with a two-line header."""
    m = np.asarray(matrix, dtype=complex)
    buf = io.StringIO()
    buf.write(f"# dim = {m.shape[0]} {m.shape[1]}\n")
    buf.write(f"# frame_frequency = {frame_frequency!r}\n")
    for z in m.reshape(-1, order="F"):
        buf.write(f"{float(z.real)!r} {float(z.imag)!r}\n")
    return buf.getvalue()


def load_snapshot(text: str) -> tuple[np.ndarray, float]:
    rows, cols, freq = None, None, 0.0
    values = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            key = key.strip()
            if key == "dim":
                rows, cols = (int(v) for v in val.split())
            elif key == "frame_frequency":
                freq = float(val)
            continue
        re_, im_ = line.split()
        values.append(complex(float(re_), float(im_)))
    if rows is None:
        raise ValueError("snapshot header lacks '# dim'")
    if len(values) != rows * cols:
        raise ValueError(f"expected {rows * cols} entries, found {len(values)}")
    return np.array(values).reshape((rows, cols), order="F"), freq
