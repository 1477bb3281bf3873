"""Chain configuration and two-channel voltage records.

Voltages are referred to the digitizer input, so that ``|V|**2 / impedance``
is the power in watts after the amplifier gain. Internally the synthesizers
work in photon-flux amplitude units (sqrt(photons/s)); ``volts_per_unit``
converts between the two.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import hbar, k as k_B

from qubitline.errors import CalibrationError, ModelError
from qubitline.params import TWO_PI, thermal_occupancy

RECORD_DTYPE = "<f4"


def named_rng(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for a named stream; stable across runs and threads."""
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


@dataclass(frozen=True)
class ChainConfig:
    """Synthetic Hanbury Brown-Twiss back end.

    ``noise_temp_k`` is the added noise temperature of each amplifier chain,
    on top of the one quantum of heterodyne vacuum noise. ``jitter_block`` is
    the number of samples sharing one trigger offset in ``"block"`` mode;
    ``"sample"`` mode draws an independent offset for every sample.
    """

    sample_rate: float = 1e8
    bw: float = 55e6
    gain_db: float = 79.0
    noise_temp_k: tuple = (7.0, 7.0)
    terminator_temp_mk: float = 50.0
    jitter_samples: int = 1
    jitter_block: int = 10_000
    jitter_mode: str = "block"
    carrier_frequency: float = 5.12e9
    impedance: float = 50.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ModelError("sample_rate must be positive")
        if not self.bw > 0:
            raise ModelError("bw must be positive")
        # Complex (IQ) samples cover a two-sided band of width sample_rate.
        if self.sample_rate < self.bw:
            raise ModelError(f"sample_rate {self.sample_rate:g} S/s must be >= bw "
                             f"({self.bw:g} Hz) for complex sampling")
        if not math.isfinite(self.gain_db):
            raise ModelError("gain_db must be finite")
        if len(self.noise_temp_k) != 2 or min(self.noise_temp_k) < 0:
            raise ModelError("noise_temp_k needs two non-negative temperatures")
        if self.jitter_samples not in (0, 1):
            raise ModelError("jitter_samples must be 0 or 1")
        if self.jitter_block < 1:
            raise ModelError("jitter_block must be >= 1")
        if self.jitter_mode not in ("block", "sample"):
            raise ModelError(f"jitter_mode must be 'block' or 'sample', got {self.jitter_mode!r}")

    @property
    def gain_linear(self) -> float:
        return 10.0 ** (self.gain_db / 10.0)

    @property
    def photon_energy(self) -> float:
        return hbar * TWO_PI * self.carrier_frequency

    @property
    def volts_per_unit(self) -> float:
        return math.sqrt(self.impedance * self.gain_linear * self.photon_energy)

    def amplifier_quanta(self) -> tuple:
        return tuple(k_B * t / self.photon_energy for t in self.noise_temp_k)

    @property
    def terminator_quanta(self) -> float:
        return thermal_occupancy(self.terminator_temp_mk * 1e-3, TWO_PI * self.carrier_frequency)

    def expected_noise_power(self) -> np.ndarray:
        """Mean |V|^2 per channel with the source off (V^2)."""
        n_amp = np.array(self.amplifier_quanta())
        quanta = 1.0 + n_amp + 0.5 * self.terminator_quanta
        return quanta * self.sample_rate * self.volts_per_unit ** 2


@dataclass(frozen=True, eq=False)
class VoltageRecord:
    ch1: np.ndarray
    ch2: np.ndarray
    sample_rate: float
    gain_db: float
    volts_per_unit: float
    impedance: float = 50.0
    source: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ch1.shape != self.ch2.shape or self.ch1.ndim != 1:
            raise ValueError("channels must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.ch1)) and np.all(np.isfinite(self.ch2))):
            raise ValueError("record contains non-finite samples")

    @property
    def n_samples(self) -> int:
        return self.ch1.size

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def scaled(self, g1: float, g2: float | None = None) -> "VoltageRecord":
        """Record with each channel's voltage gain multiplied by ``g1``/``g2``."""
        g2 = g1 if g2 is None else g2
        return VoltageRecord(self.ch1 * g1, self.ch2 * g2, self.sample_rate, self.gain_db,
                             self.volts_per_unit, self.impedance, self.source, self.seed,
                             dict(self.meta))

    def head(self, n: int) -> "VoltageRecord":
        return VoltageRecord(self.ch1[:n], self.ch2[:n], self.sample_rate, self.gain_db,
                             self.volts_per_unit, self.impedance, self.source, self.seed,
                             dict(self.meta))

    def noise_floor(self) -> np.ndarray:
        return np.array([np.mean(np.abs(self.ch1) ** 2), np.mean(np.abs(self.ch2) ** 2)])

    def check_calibration(self, cfg: ChainConfig, rtol: float = 0.05) -> np.ndarray:
        """Compare the per-channel floor of a source-off record with ``cfg``."""
        measured = self.noise_floor()
        expected = cfg.expected_noise_power()
        rel = measured / expected - 1.0
        if np.any(np.abs(rel) > rtol):
            raise CalibrationError(
                f"noise floor off by {rel[0]:+.3f}, {rel[1]:+.3f} relative to the configured "
                f"noise temperatures (tolerance {rtol})")
        return rel

    # -- files ----------------------------------------------------------------

    def save(self, path) -> Path:
        """Write the binary stream plus a ``.hdr`` sidecar; returns the header path.

        The stream holds channel 1 then channel 2, each as interleaved
        little-endian float32 (re, im) pairs.
        """
        path = Path(path)
        with open(path, "wb") as fh:
            for ch in (self.ch1, self.ch2):
                pairs = np.empty(2 * ch.size, dtype=RECORD_DTYPE)
                pairs[0::2] = ch.real
                pairs[1::2] = ch.imag
                fh.write(pairs.tobytes())
        hdr = path.with_name(path.name + ".hdr")
        lines = {
            "format": "interleaved-complex float32 little-endian, ch1 then ch2",
            "n_samples": self.n_samples,
            "channels": 2,
            "sample_rate": repr(float(self.sample_rate)),
            "gain_db": repr(float(self.gain_db)),
            "volts_per_unit": repr(float(self.volts_per_unit)),
            "impedance": repr(float(self.impedance)),
            "seed": self.seed,
            "source": self.source,
        }
        hdr.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
        return hdr

    @classmethod
    def load(cls, path) -> "VoltageRecord":
        path = Path(path)
        hdr = {}
        for line in path.with_name(path.name + ".hdr").read_text().splitlines():
            key, _, val = line.partition("=")
            hdr[key.strip()] = val.strip()
        n = int(hdr["n_samples"])
        raw = np.fromfile(path, dtype=RECORD_DTYPE)
        if raw.size != 4 * n:
            raise ValueError(f"{path}: expected {4 * n} floats, found {raw.size}")
        chans = [raw[2 * n * i:2 * n * (i + 1)] for i in range(2)]
        ch1, ch2 = ((c[0::2] + 1j * c[1::2]).astype(complex) for c in chans)
        return cls(ch1, ch2, float(hdr["sample_rate"]), float(hdr["gain_db"]),
                   float(hdr["volts_per_unit"]), float(hdr["impedance"]), hdr.get("source", ""),
                   int(hdr.get("seed", 0)))


def write_calibration(path, noise_record: VoltageRecord) -> None:
    p1, p2 = (float(p) for p in noise_record.noise_floor() / noise_record.impedance)
    Path(path).write_text(
        f"# measured noise powers with the source off (W at digitizer)\n"
        f"noise_p1 = {p1!r}\nnoise_p2 = {p2!r}\n"
        f"n_samples = {noise_record.n_samples}\nsample_rate = {float(noise_record.sample_rate)!r}\n")


def read_calibration(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or "=" not in line:
            continue
        key, _, val = line.partition("=")
        out[key.strip()] = float(val)
    return out
