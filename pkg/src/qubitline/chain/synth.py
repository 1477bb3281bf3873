"""Synthetic two-channel records: Gaussian reference sources and the atom's
output unraveled as a two-output heterodyne measurement.

Currents are in sqrt(photons/s); one sample is the average over a bin of
length 1/sample_rate, so a vacuum input has per-sample variance
``sample_rate`` (one quantum of heterodyne noise).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter

from qubitline.chain.records import ChainConfig, VoltageRecord, named_rng
from qubitline.errors import ModelError, TrajectoryDivergenceError
from qubitline.params import AtomParams, DriveSpec, dbm_to_watts
from qubitline.quantum import build_atom_liouvillian, line_coupling, normalize_port, steady_state

MIN_SAMPLES = 10_000
# Largest gamma10*dt used by the trajectory integrator.
MAX_GAMMA_DT = 0.05
_CHUNK = 1024
_GUARD = 1e-3


def _cnormal(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    z = rng.standard_normal(shape + (2,) if isinstance(shape, tuple) else (shape, 2))
    return (z[..., 0] + 1j * z[..., 1]) * math.sqrt(0.5 * var)


def _channel_noise(cfg: ChainConfig, n: int, seed: int, vacuum: bool):
    """Amplifier noise per channel plus the terminator's thermal excess.

    The terminator feeds the hybrid's second input, so its field enters the
    two outputs with opposite signs. ``vacuum`` adds the quantum floor,
    which trajectory currents already carry.
    """
    fs = cfg.sample_rate
    n_amp = cfg.amplifier_quanta()
    out = []
    for k in range(2):
        var = (n_amp[k] + (1.0 if vacuum else 0.0)) * fs
        out.append(_cnormal(named_rng(seed, "amplifier", k), n, var) if var > 0
                   else np.zeros(n, complex))
    n_term = cfg.terminator_quanta
    if n_term > 0:
        t = _cnormal(named_rng(seed, "terminator"), n, n_term * fs) / math.sqrt(2.0)
        out[0] += t
        out[1] -= t
    return out


def _as_record(cfg: ChainConfig, x1, x2, source: str, seed: int, **meta) -> VoltageRecord:
    v = cfg.volts_per_unit
    return VoltageRecord(x1 * v, x2 * v, cfg.sample_rate, cfg.gain_db, v, cfg.impedance,
                         source, seed, meta)


def _n_samples(cfg: ChainConfig, duration: float | None, n_samples: int | None) -> int:
    if n_samples is None:
        if duration is None or not duration > 0:
            raise ModelError("give a positive duration or n_samples")
        n_samples = int(round(duration * cfg.sample_rate))
    if n_samples < MIN_SAMPLES:
        raise ModelError(f"record needs at least {MIN_SAMPLES} samples, got {n_samples}")
    return int(n_samples)


def synthesize_reference(kind: str, power_dbm: float, cfg: ChainConfig,
                         duration: float | None = None, n_samples: int | None = None,
                         seed: int | None = None, source_bw: float | None = None) -> VoltageRecord:
    """Coherent, thermal or vacuum source through the 50/50 hybrid.

    ``power_dbm`` is the source power at the hybrid input (ignored for
    vacuum). The thermal source is white over the sampled band unless
    ``source_bw`` (Hz) sets a single-pole Lorentzian line shape.
    """
    n = _n_samples(cfg, duration, n_samples)
    seed = cfg.rng_seed if seed is None else seed
    if kind == "vacuum":
        flux = 0.0
    else:
        if math.isnan(power_dbm) or power_dbm == math.inf:
            raise ModelError(f"invalid source power {power_dbm} dBm")
        flux = dbm_to_watts(power_dbm) / cfg.photon_energy

    if kind == "coherent":
        s = np.full(n, math.sqrt(flux), dtype=complex)
    elif kind == "thermal":
        s = _cnormal(named_rng(seed, "source"), n, flux)
        if source_bw is not None:
            a = math.exp(-math.pi * source_bw / cfg.sample_rate)
            # Start from the stationary state so the first samples are not transient.
            s = lfilter([math.sqrt(1.0 - a * a)], [1.0, -a], s, zi=[a * s[0]])[0]
    elif kind == "vacuum":
        s = np.zeros(n, complex)
    else:
        raise ModelError(f"unknown reference kind {kind!r}")

    x1, x2 = _channel_noise(cfg, n, seed, vacuum=True)
    x1 += s / math.sqrt(2.0)
    x2 += s / math.sqrt(2.0)
    return _as_record(cfg, x1, x2, f"{kind} {power_dbm:g} dBm" if kind != "vacuum" else "vacuum",
                      seed, kind=kind, flux=flux)


class _Unraveling:
    """Kraus-form heterodyne update of a 2x2 state.

    Each hybrid output monitors half of the atom's emission into the
    measured direction; emission into the other direction and pure
    dephasing are unobserved.
    """

    def __init__(self, atom: AtomParams, drive: DriveSpec, dt: float):
        g, gp = atom.gamma10, atom.gamma_phi
        delta = drive.detuning(atom)
        half_rabi = 0.5 * drive.omega_rabi
        self.dt = dt
        self.k1 = line_coupling(atom) / math.sqrt(2.0)
        # No-jump propagator exp(-i H_eff dt), H_eff = H - i K/2.
        h_eff = np.array([[-0.25j * gp, half_rabi],
                          [half_rabi, -delta - 1j * (0.5 * g + 0.25 * gp)]])
        self.m0 = expm(-1j * h_eff * dt)
        self.jump = 0.5 * g * dt
        self.deph = 0.5 * gp * dt

    def run(self, rho0: np.ndarray, rng: np.random.Generator, n_samples: int, nsub: int,
            index: int):
        """Integrate one trajectory; returns its bin-averaged currents."""
        state = np.array([rho0[0, 0].real, rho0[1, 1].real, rho0[0, 1]], dtype=complex)
        j = np.empty((n_samples, 2), complex)
        m0 = self.m0
        coeffs = np.array([m0[0, 0], m0[0, 1], m0[1, 0], m0[1, 1], self.k1, self.jump,
                           self.deph, self.dt])
        sd = math.sqrt(0.5 * self.dt)
        for start in range(0, n_samples, _CHUNK):
            stop = min(start + _CHUNK, n_samples)
            noise = rng.standard_normal((stop - start, nsub, 4))
            noise *= sd
            bad = _kraus_steps(state, noise, coeffs, j[start:stop])
            if bad >= 0:
                gg, ee, ge = state
                raise TrajectoryDivergenceError(
                    f"trajectory {index} left the state space at sample {start + bad} "
                    f"(rho_gg={gg.real:.4g}, rho_ee={ee.real:.4g}, |rho_ge|={abs(ge):.4g}); "
                    f"reduce the time step")
        j /= nsub * self.dt
        return j[:, 0], j[:, 1]


@numba.njit(cache=True, nogil=True)
def _kraus_steps(state, noise, coeffs, out):
    """Advance one trajectory through ``noise.shape[0]`` samples in place.

    Returns the index of the sample where the state left the state space, or -1.
    """
    m00, m01d, m10, m11, k1 = coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4]
    jump, deph, dt = coeffs[5].real, coeffs[6].real, coeffs[7].real
    m00c, m10c, m11c = np.conj(m00), np.conj(m10), np.conj(m11)
    gg, ee, ge = state[0].real, state[1].real, state[2]
    for i in range(noise.shape[0]):
        a1 = 0j
        a2 = 0j
        for s in range(noise.shape[1]):
            z = noise[i, s]
            eg = np.conj(ge)
            mean = k1 * eg * dt
            dy1 = mean + complex(z[0], z[1])
            dy2 = mean + complex(z[2], z[3])
            a1 += dy1
            a2 += dy2
            m01 = k1 * np.conj(dy1 + dy2) + m01d
            r00 = m00 * gg + m01 * eg
            r01 = m00 * ge + m01 * ee
            r10 = m10 * gg + m11 * eg
            r11 = m10 * ge + m11 * ee
            ngg = (r00 * m00c + r01 * np.conj(m01)).real + jump * ee + deph * gg
            nee = (r10 * m10c + r11 * m11c).real + deph * ee
            nge = r00 * m10c + r01 * m11c - deph * ge
            tr = ngg + nee
            gg, ee, ge = ngg / tr, nee / tr, nge / tr
        out[i, 0] = a1
        out[i, 1] = a2
        ok = (np.isfinite(gg) and np.isfinite(ge.real) and np.isfinite(ge.imag)
              and gg > -_GUARD and ee > -_GUARD and abs(ge) ** 2 <= gg * ee + _GUARD)
        state[0], state[1], state[2] = gg, ee, ge
        if not ok:
            return i
    return -1


def synthesize_atom_output(atom: AtomParams, drive: DriveSpec, port: str, cfg: ChainConfig,
                           duration: float | None = None, n_trajectories: int = 1000,
                           n_samples: int | None = None, seed: int | None = None,
                           substeps: int | None = None, threads: int = 1) -> VoltageRecord:
    """Heterodyne-unraveled atom output split onto both channels.

    Trajectories start from the unconditional steady state, each with its
    own random stream, and are concatenated in index order; the result does
    not depend on ``threads``.
    """
    port = normalize_port(port)
    if n_trajectories < 1:
        raise ModelError("n_trajectories must be >= 1")
    if atom.n_thermal > 0:
        raise ModelError("trajectory synthesis supports a vacuum line only (n_thermal = 0)")
    build_atom_liouvillian(atom, drive)  # RWA and parameter checks
    n = _n_samples(cfg, duration, n_samples)
    seed = cfg.rng_seed if seed is None else seed
    per = -(-n // n_trajectories)
    period = 1.0 / cfg.sample_rate
    nsub = substeps or max(1, math.ceil(atom.gamma10 * period / MAX_GAMMA_DT))
    dt = period / nsub

    rho0 = steady_state(build_atom_liouvillian(atom, drive)).matrix
    engine = _Unraveling(atom, drive, dt)

    def one(k):
        return engine.run(rho0, named_rng(seed, "trajectory", k), per, nsub, k)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, range(n_trajectories)))
    else:
        parts = [one(k) for k in range(n_trajectories)]
    x1 = np.concatenate([p[0] for p in parts])[:n]
    x2 = np.concatenate([p[1] for p in parts])[:n]

    if port == "transmitted":
        carrier = drive.amplitude / math.sqrt(2.0)
        x1 += carrier
        x2 += carrier
    v1, v2 = _channel_noise(cfg, n, seed, vacuum=False)
    x1 += v1
    x2 += v2
    return _as_record(cfg, x1, x2, f"atom {port} {drive.power_dbm:.4g} dBm", seed,
                      port=port, n_photons=drive.n_photons, n_trajectories=n_trajectories,
                      substeps=nsub)


def apply_record_jitter(record: VoltageRecord, cfg: ChainConfig,
                        seed: int | None = None) -> VoltageRecord:
    """Offset channel 2 by a random shift in {-1, 0, +1} samples.

    One shift per block of ``cfg.jitter_block`` samples (or per sample in
    ``"sample"`` mode); indices past the record ends are clamped.
    """
    if cfg.jitter_samples == 0:
        return record
    seed = cfg.rng_seed if seed is None else seed
    n = record.n_samples
    block = 1 if cfg.jitter_mode == "sample" else cfg.jitter_block
    n_blocks = -(-n // block)
    shifts = named_rng(seed, "jitter").integers(-cfg.jitter_samples, cfg.jitter_samples + 1,
                                                 n_blocks)
    idx = np.clip(np.arange(n) + np.repeat(shifts, block)[:n], 0, n - 1)
    meta = dict(record.meta, jitter=cfg.jitter_mode)
    return VoltageRecord(record.ch1, record.ch2[idx], record.sample_rate, record.gain_db,
                         record.volts_per_unit, record.impedance, record.source, record.seed, meta)
