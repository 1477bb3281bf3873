"""Cross-channel power covariance estimate of g2(tau) with noise subtraction.

    g2(tau) = 1 + <dP1(t) dP2(t+tau)> / ((<P1> - <P1,N>) (<P2> - <P2,N>))

where P_i = |V_i|^2 / Z0 after a single-pole digital filter and the noise
powers come from a record taken with the source off.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from qubitline.chain.records import VoltageRecord, named_rng
from qubitline.correlation import CorrelationTrace, default_tau_grid
from qubitline.errors import CalibrationError, GridError, ModelError

ESTIMATOR_COLUMNS = ("tau_ns", "g2", "stderr", "n_samples", "net_p1", "net_p2")
MIN_BLOCK = 1000


@dataclass(frozen=True, eq=False)
class EstimatorOutput:
    trace: CorrelationTrace
    net_power: tuple  # W
    noise_power: tuple  # W
    n_samples: int
    stderr: np.ndarray
    net_stderr: tuple
    block_length: int
    n_boot: int

    @property
    def g2(self) -> np.ndarray:
        return self.trace.g2

    @property
    def tau(self) -> np.ndarray:
        return self.trace.tau

    def at(self, tau: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.trace.tau - tau)))
        return float(self.trace.g2[i]), float(self.stderr[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ESTIMATOR_COLUMNS)
            for t, g, s in zip(self.trace.tau_ns, self.trace.g2, self.stderr):
                w.writerow([f"{t:.6g}", f"{g:.12g}", f"{s:.6g}", self.n_samples,
                            f"{self.net_power[0]:.8e}", f"{self.net_power[1]:.8e}"])


def filter_record(record: VoltageRecord, bw: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Single-pole low-pass of both channels; returns filtered channels and
    the number of leading samples to drop as filter transient.

    The pole ``a = exp(-pi*bw/fs)`` makes the power correlation of white
    Gaussian input decay as ``exp(-2*pi*bw*|tau|)``.
    """
    a = math.exp(-math.pi * bw / record.sample_rate)
    y1 = lfilter([1.0 - a], [1.0, -a], record.ch1)
    y2 = lfilter([1.0 - a], [1.0, -a], record.ch2)
    settle = int(math.ceil(math.log(1e-9) / math.log(a))) if a > 0 else 1
    return y1, y2, settle


def _lags(tau_grid, fs: float) -> np.ndarray:
    tau = np.asarray(tau_grid, dtype=float)
    lags = np.rint(tau * fs)
    if np.any(np.abs(lags - tau * fs) > 1e-6):
        raise GridError(f"tau grid must be a multiple of the sample period {1 / fs:g} s")
    return lags.astype(np.int64)


def _block_sums(x: np.ndarray, block: int) -> np.ndarray:
    nb = x.size // block
    return x[:nb * block].reshape(nb, block).sum(axis=1)


def estimate_g2(record: VoltageRecord, noise_record: VoltageRecord, bw: float, tau_grid=None,
                block: int | None = None, n_boot: int = 200, seed: int = 0,
                threads: int = 1) -> EstimatorOutput:
    """g2 trace from a source record and a source-off calibration record.

    Standard errors come from a bootstrap over non-overlapping blocks (at least
    ``10/bw``) applied independently to both records.
    """
    if not bw > 0:
        raise ModelError(f"bandwidth must be positive, got {bw}")
    fs = record.sample_rate
    if fs < bw:
        raise ModelError(f"sample rate {fs:g} S/s is below bw = {bw:g} Hz")
    for name in ("sample_rate", "gain_db", "volts_per_unit", "impedance"):
        if getattr(noise_record, name) != getattr(record, name):
            raise CalibrationError(f"noise record differs from the source record in {name}")
    tau_grid = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    lags = _lags(tau_grid, fs)
    if block is None:
        block = max(MIN_BLOCK, int(math.ceil(10.0 * fs / bw)))
    z0 = record.impedance

    y1, y2, settle = filter_record(record, bw)
    kmax = int(np.max(np.abs(lags)))
    t0 = settle + kmax
    usable = record.n_samples - kmax - t0
    nb = usable // block
    if nb < 20:
        raise ModelError(f"record too short: {nb} bootstrap blocks of {block} samples")
    m = nb * block
    p1 = np.abs(y1) ** 2 / z0
    p2 = np.abs(y2) ** 2 / z0
    s1 = _block_sums(p1[t0:t0 + m], block)
    s2 = _block_sums(p2[t0:t0 + m], block)

    def lag_sums(lag):
        return _block_sums(p1[t0:t0 + m] * p2[t0 + lag:t0 + lag + m], block)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            cross = np.array(list(pool.map(lag_sums, lags)))
    else:
        cross = np.array([lag_sums(k) for k in lags])

    n1, n2, nsettle = filter_record(noise_record, bw)
    q1 = _block_sums(np.abs(n1[nsettle:]) ** 2 / z0, block)
    q2 = _block_sums(np.abs(n2[nsettle:]) ** 2 / z0, block)
    if q1.size < 20:
        raise ModelError("noise record too short for the bootstrap")
    mq = q1.size * block

    def g2_from(w, v):
        """Estimates for bootstrap weights ``w`` (source) and ``v`` (noise)."""
        m1, m2 = w @ s1 / m, w @ s2 / m
        c = w @ cross.T / m
        pn1, pn2 = v @ q1 / mq, v @ q2 / mq
        net1, net2 = m1 - pn1, m2 - pn2
        cov = c - (m1 * m2)[..., None]
        return 1.0 + cov / (net1 * net2)[..., None], net1, net2, pn1, pn2

    g2, net1, net2, pn1, pn2 = g2_from(np.ones(nb), np.ones(q1.size))
    rng = named_rng(seed, "bootstrap")
    w = rng.multinomial(nb, np.full(nb, 1.0 / nb), size=n_boot).astype(float)
    v = rng.multinomial(q1.size, np.full(q1.size, 1.0 / q1.size), size=n_boot).astype(float)
    bg2, bnet1, bnet2, _, _ = g2_from(w, v)
    se_net = (float(np.std(bnet1, ddof=1)), float(np.std(bnet2, ddof=1)))
    for i, (net, se) in enumerate(((net1, se_net[0]), (net2, se_net[1])), start=1):
        if not net > 3.0 * se:
            raise CalibrationError(
                f"net power on channel {i} is {net:.3e} W with standard error {se:.3e} W; "
                f"the source is not resolved above the calibrated noise floor")
    stderr = np.std(bg2, axis=0, ddof=1)

    meta = {k: record.meta[k] for k in ("port", "n_photons") if k in record.meta}
    trace = CorrelationTrace(tau_grid, g2, meta.get("port", record.meta.get("kind", "record")),
                             bw, "jitter" in record.meta, n_photons=meta.get("n_photons", math.nan),
                             stderr=stderr, meta={"source": record.source})
    return EstimatorOutput(trace, (float(net1), float(net2)), (float(pn1), float(pn2)), m,
                           stderr, se_net, block, n_boot)
