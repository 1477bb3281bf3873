import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from qubitline.chain import (ChainConfig, VoltageRecord, apply_record_jitter, estimate_g2,
                             read_calibration, synthesize_atom_output, synthesize_reference,
                             write_calibration)
from qubitline.chain import synth
from qubitline.correlation import apply_trigger_jitter, default_tau_grid, g2_reference
from qubitline.errors import (CalibrationError, GridError, ModelError,
                              TrajectoryDivergenceError)
from qubitline.params import AtomParams, DriveSpec
from qubitline.quantum import (build_atom_liouvillian, dag, line_coupling, sigma_minus,
                               steady_state, two_time_correlator)

QUIET = ChainConfig(noise_temp_k=(0.0, 0.0), terminator_temp_mk=0.0, jitter_samples=0)
GRID = default_tau_grid(10e-9, 100e-9)


@pytest.fixture(scope="module")
def thermal_pair():
    cfg = ChainConfig(bw=18e6, jitter_samples=0)
    src = synthesize_reference("thermal", -110, cfg, n_samples=2_000_000, seed=1)
    off = synthesize_reference("vacuum", 0, cfg, n_samples=2_000_000, seed=2)
    return cfg, src, off


def test_config_validation():
    with pytest.raises(ModelError):
        ChainConfig(sample_rate=1e7, bw=55e6)
    with pytest.raises(ModelError):
        ChainConfig(jitter_samples=2)
    with pytest.raises(ModelError):
        ChainConfig(noise_temp_k=(7.0,))
    with pytest.raises(ModelError):
        ChainConfig(jitter_mode="random")
    cfg = ChainConfig()
    assert cfg.amplifier_quanta()[0] == pytest.approx(28.5, rel=0.01)


def test_too_short_record():
    with pytest.raises(ModelError):
        synthesize_reference("coherent", -110, QUIET, n_samples=100)
    with pytest.raises(ModelError):
        synthesize_reference("squeezed", -110, QUIET, n_samples=20_000)


def test_record_round_trip(tmp_path):
    cfg = ChainConfig()
    rec = synthesize_reference("thermal", -115, cfg, n_samples=20_000, seed=4)
    hdr = rec.save(tmp_path / "rec.bin")
    assert (tmp_path / "rec.bin").stat().st_size == 20_000 * 2 * 2 * 4
    text = hdr.read_text()
    assert "sample_rate = 100000000.0" in text and "gain_db = 79.0" in text
    back = VoltageRecord.load(tmp_path / "rec.bin")
    assert back.n_samples == rec.n_samples and back.source == rec.source
    assert np.allclose(back.ch1, rec.ch1, rtol=1e-6, atol=0)
    assert np.allclose(back.ch2, rec.ch2, rtol=1e-6, atol=0)


def test_record_rejects_bad_input():
    with pytest.raises(ValueError):
        VoltageRecord(np.zeros(3, complex), np.zeros(4, complex), 1e8, 79, 1.0)
    with pytest.raises(ValueError):
        VoltageRecord(np.array([np.nan + 0j]), np.zeros(1, complex), 1e8, 79, 1.0)


def test_noise_floor_calibration(tmp_path):
    cfg = ChainConfig()
    off = synthesize_reference("vacuum", 0, cfg, n_samples=200_000, seed=5)
    rel = off.check_calibration(cfg)
    assert np.all(np.abs(rel) < 0.01)
    with pytest.raises(CalibrationError):
        off.check_calibration(ChainConfig(noise_temp_k=(10.0, 7.0)))
    write_calibration(tmp_path / "cal.txt", off)
    cal = read_calibration(tmp_path / "cal.txt")
    assert cal["noise_p1"] == pytest.approx(off.noise_floor()[0] / 50.0)
    assert cal["n_samples"] == 200_000


def test_terminator_noise_is_anticorrelated():
    cfg = ChainConfig(noise_temp_k=(0.0, 0.0), terminator_temp_mk=200.0)
    off = synthesize_reference("vacuum", 0, cfg, n_samples=400_000, seed=6)
    x1, x2 = off.ch1 / off.volts_per_unit, off.ch2 / off.volts_per_unit
    cross = np.mean(x1 * np.conj(x2)).real
    expected = -0.5 * cfg.terminator_quanta * cfg.sample_rate
    assert cross == pytest.approx(expected, rel=0.1)
    quiet = synthesize_reference("vacuum", 0, QUIET, n_samples=400_000, seed=6)
    q = np.mean(quiet.ch1 * np.conj(quiet.ch2)) / quiet.volts_per_unit ** 2
    assert abs(q) < 5 * QUIET.sample_rate / math.sqrt(400_000)


def test_thermal_reference_bunches(thermal_pair):
    cfg, src, off = thermal_pair
    out = estimate_g2(src, off, cfg.bw, GRID)
    ref = g2_reference("thermal", cfg.bw, GRID).g2
    assert np.all(np.abs(out.g2 - ref) < 4 * out.stderr + 0.01)
    g0, se = out.at(0.0)
    assert abs(g0 - 2.0) < 4 * se


def test_coherent_reference_is_flat():
    cfg = ChainConfig(bw=55e6, jitter_samples=0)
    src = synthesize_reference("coherent", -110, cfg, n_samples=1_000_000, seed=7)
    off = synthesize_reference("vacuum", 0, cfg, n_samples=1_000_000, seed=8)
    out = estimate_g2(src, off, cfg.bw, GRID)
    assert np.all(np.abs(out.g2 - 1.0) < 4 * out.stderr + 0.005)


def test_jittered_thermal_matches_three_point_average():
    cfg = ChainConfig(bw=55e6, jitter_samples=1, jitter_block=1000)
    src = apply_record_jitter(synthesize_reference("thermal", -110, cfg, n_samples=2_000_000,
                                                   seed=9), cfg, seed=9)
    off = synthesize_reference("vacuum", 0, cfg, n_samples=2_000_000, seed=10)
    out = estimate_g2(src, off, cfg.bw, GRID)
    expected = apply_trigger_jitter(g2_reference("thermal", cfg.bw, GRID)).g2
    assert out.trace.jitter_applied
    assert np.all(np.abs(out.g2 - expected) < 4 * out.stderr + 0.01)


def test_gain_invariance(thermal_pair):
    cfg, src, off = thermal_pair
    a = estimate_g2(src.head(400_000), off.head(400_000), cfg.bw, GRID)
    b = estimate_g2(src.head(400_000).scaled(3.0, 0.5), off.head(400_000).scaled(3.0, 0.5),
                    cfg.bw, GRID)
    assert np.allclose(a.g2, b.g2, rtol=1e-9, atol=1e-12)
    assert b.net_power[0] == pytest.approx(9 * a.net_power[0])


def test_stderr_shrinks_with_record_length(thermal_pair):
    cfg, src, off = thermal_pair
    short = estimate_g2(src.head(500_000), off.head(500_000), cfg.bw, [0.0])
    full = estimate_g2(src, off, cfg.bw, [0.0])
    assert 1.4 < short.stderr[0] / full.stderr[0] < 2.8


def test_estimator_rejects_bad_inputs(thermal_pair):
    cfg, src, off = thermal_pair
    with pytest.raises(GridError):
        estimate_g2(src, off, cfg.bw, [0.0, 5e-9])
    other = VoltageRecord(off.ch1, off.ch2, off.sample_rate, 80.0, off.volts_per_unit)
    with pytest.raises(CalibrationError):
        estimate_g2(src, other, cfg.bw, [0.0])
    with pytest.raises(ModelError):
        estimate_g2(src, off, 0.0, [0.0])


def test_noise_only_source_is_rejected():
    cfg = ChainConfig()
    a = synthesize_reference("vacuum", 0, cfg, n_samples=400_000, seed=11)
    b = synthesize_reference("vacuum", 0, cfg, n_samples=400_000, seed=12)
    with pytest.raises(CalibrationError, match="noise floor"):
        estimate_g2(a, b, cfg.bw, [0.0])


def test_estimator_csv(thermal_pair, tmp_path):
    cfg, src, off = thermal_pair
    out = estimate_g2(src.head(300_000), off.head(300_000), cfg.bw, [0.0, 10e-9])
    out.to_csv(tmp_path / "g2.csv")
    lines = (tmp_path / "g2.csv").read_text().splitlines()
    assert lines[0] == "tau_ns,g2,stderr,n_samples,net_p1,net_p2"
    assert len(lines) == 3


def test_sample_mode_jitter():
    cfg = ChainConfig(jitter_mode="sample")
    rec = synthesize_reference("thermal", -110, cfg, n_samples=30_000, seed=13)
    jit = apply_record_jitter(rec, cfg, seed=13)
    assert jit.meta["jitter"] == "sample"
    assert np.array_equal(jit.ch1, rec.ch1)
    moved = np.mean(jit.ch2[1:-1] != rec.ch2[1:-1])
    assert moved == pytest.approx(2 / 3, abs=0.02)
    same = apply_record_jitter(rec, ChainConfig(jitter_samples=0))
    assert same is rec


def _binned_oracle(atom, drive, fs):
    """Mean and variance of one channel's bin-averaged current."""
    L = build_atom_liouvillian(atom, drive)
    rho = steady_state(L)
    sm = sigma_minus()
    k1 = line_coupling(atom) / math.sqrt(2.0)
    period = 1.0 / fs
    tau = np.linspace(0.0, period, 401)
    c = two_time_correlator(L, dag(sm), sm, tau, rho=rho) - abs(rho.expect(sm)) ** 2
    incoherent = abs(k1) ** 2 * 2.0 * trapezoid((1 - tau / period) * c.real, tau) / period
    return k1 * rho.expect(sm), fs + incoherent


def test_trajectory_currents_match_master_equation(atom):
    drive = DriveSpec.from_photon_number(atom, 0.4)
    rec = synthesize_atom_output(atom, drive, "r", QUIET, n_samples=400_000,
                                 n_trajectories=40, seed=3)
    mean, var = _binned_oracle(atom, drive, QUIET.sample_rate)
    n = rec.n_samples
    for ch in (rec.ch1, rec.ch2):
        x = ch / rec.volts_per_unit
        assert abs(np.mean(x) - mean) < 4 * math.sqrt(var / n)
        assert np.mean(np.abs(x - np.mean(x)) ** 2) == pytest.approx(var, rel=4 * math.sqrt(1 / n))
    assert rec.meta["substeps"] == 52


def test_trajectories_do_not_depend_on_threads(atom):
    drive = DriveSpec.from_photon_number(atom, 1.0)
    kw = dict(n_samples=20_000, n_trajectories=8, seed=21)
    a = synthesize_atom_output(atom, drive, "t", QUIET, threads=1, **kw)
    b = synthesize_atom_output(atom, drive, "t", QUIET, threads=3, **kw)
    assert np.array_equal(a.ch1, b.ch1) and np.array_equal(a.ch2, b.ch2)
    c = synthesize_atom_output(atom, drive, "t", QUIET, threads=1, n_samples=20_000,
                               n_trajectories=8, seed=22)
    assert not np.array_equal(a.ch1, c.ch1)


def test_far_detuned_atom_transmits_a_coherent_tone(atom):
    drive = DriveSpec.from_power(atom, -125.0, detuning=2 * math.pi * 500e6)
    rec = synthesize_atom_output(atom, drive, "t", QUIET, n_samples=400_000,
                                 n_trajectories=20, seed=23)
    off = synthesize_reference("vacuum", 0, QUIET, n_samples=400_000, seed=24)
    out = estimate_g2(rec, off, QUIET.bw, [0.0, 10e-9])
    assert np.all(np.abs(out.g2 - 1.0) < 4 * out.stderr + 0.01)


def test_trajectory_rejects_warm_line(atom):
    warm = AtomParams(atom.omega01, atom.gamma10, atom.gamma_phi, 0.01)
    with pytest.raises(ModelError):
        synthesize_atom_output(warm, DriveSpec.from_photon_number(warm, 1), "r", QUIET,
                               n_samples=20_000)


def test_divergence_guard_in_kernel():
    state = np.array([1.0, 0.0, 0.0], dtype=complex)
    noise = np.zeros((4, 2, 4))
    noise[2, 1, 0] = np.inf
    coeffs = np.array([1, 0, 0, 1, 0.1, 0, 0, 1e-3], dtype=complex)
    out = np.empty((4, 2), complex)
    assert synth._kraus_steps(state, noise, coeffs, out) == 2


def test_divergence_is_reported(atom, monkeypatch):
    monkeypatch.setattr(synth, "_kraus_steps", lambda state, noise, coeffs, out: 7)
    with pytest.raises(TrajectoryDivergenceError, match="trajectory 0 .* sample 7"):
        synthesize_atom_output(atom, DriveSpec.from_photon_number(atom, 1), "r", QUIET,
                               n_samples=20_000, n_trajectories=2)


def test_source_off_power_fluctuations_are_uncorrelated():
    cfg = ChainConfig()
    off = synthesize_reference("vacuum", 0, cfg, n_samples=400_000, seed=25)
    p1, p2 = np.abs(off.ch1) ** 2, np.abs(off.ch2) ** 2
    d1, d2 = p1 - p1.mean(), p2 - p2.mean()
    prod = d1 * d2
    se = prod.std() / math.sqrt(prod.size)
    assert abs(prod.mean()) < 3 * se
